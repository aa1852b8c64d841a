//! Configuration files, snapshots, run manifests and CSV output.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod snapshot;

pub use config::{parse_config, parse_config_str, InitialSpec, ParsedConfig};
pub use manifest::{RunManifest, SnapshotEntry, Timing, MANIFEST_NAME};
pub use plot::{emit_plot_data, write_diagnostics_csv, PlotData, PlotKind};
pub use snapshot::{list_snapshots, snapshot_name, SnapshotFile, HEADER_LEN};
