//! Batch orchestration: manifest in, adversarial PNGs and `report.json` out.

mod manifest;
mod run;
mod sweep;

pub use manifest::{load_manifest, parse_manifest, ManifestEntry, TaskKind};
pub use run::{
    entry_dtp_config, entry_placement_seed, rescore, run_batch, run_batch_with_model, run_entry,
    score_from_records, EntryRecord, EntryStatus, PhaseKind, RunConfig, RunReport, REPORT_FILE,
    TOOLKIT_VERSION,
};
pub use sweep::{
    ablation_sweep, apply, parse_axis_values, parse_color, parse_real, SweepAxis, SweepReport,
    SweepRow, SweepValue,
};
