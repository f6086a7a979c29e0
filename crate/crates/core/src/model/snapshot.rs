//! Weight snapshot container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      4 bytes  "PGTK"
//! version    u32      1
//! patch      u32      32
//! dim        u32      64
//! vocab      u32      4096
//! image_projection  f32 × (patch·patch·3·dim)
//! token_table       f32 × (vocab·dim)
//! text_projection   f32 × (dim·dim)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ToyDualEncoder, EMBED_DIM, INPUT_LEN, PATCH_SIZE, VOCAB_SIZE};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PGTK";
const VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(model: &ToyDualEncoder, mut w: W) -> std::io::Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    for v in [VERSION, PATCH_SIZE as u32, EMBED_DIM as u32, VOCAB_SIZE as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for m in [&model.image_projection, &model.token_table, &model.text_projection] {
        for &x in m.iter() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<ToyDualEncoder> {
    let bad = |msg: &str| Error::MalformedSnapshot(msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut header = [0u32; 4];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        *h = u32::from_le_bytes(b);
    }
    let [version, patch, dim, vocab] = header;
    if version != VERSION {
        return Err(Error::MalformedSnapshot(format!("unsupported version {version}")));
    }
    if (patch as usize, dim as usize, vocab as usize) != (PATCH_SIZE, EMBED_DIM, VOCAB_SIZE) {
        return Err(Error::MalformedSnapshot(format!(
            "shape {patch}/{dim}/{vocab} does not match {PATCH_SIZE}/{EMBED_DIM}/{VOCAB_SIZE}"
        )));
    }
    let mut matrix = |n: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(|_| bad("truncated weights"))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect())
    };
    let image_projection = matrix(INPUT_LEN * EMBED_DIM)?;
    let token_table = matrix(VOCAB_SIZE * EMBED_DIM)?;
    let text_projection = matrix(EMBED_DIM * EMBED_DIM)?;
    ToyDualEncoder::from_weights(image_projection, token_table, text_projection)
}

pub fn save_snapshot(model: &ToyDualEncoder, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_snapshot(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<ToyDualEncoder> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshot(BufReader::new(file))
}
