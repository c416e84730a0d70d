//! Files: ESRI ASCII grids, composition rasters, run manifests and
//! grayscale quick-looks.

mod ascii;
mod composition;
mod manifest;
mod pgm;

pub use ascii::{format_ascii_grid, format_g17, parse_ascii_grid, read_ascii_grid, write_ascii_grid};
pub use composition::{
    read_composition, read_composition_csv, read_composition_grids, write_composition, write_composition_csv,
    CompositionSidecar,
};
pub use manifest::{sha256_file, sha256_hex, FileDigest, RunManifest};
pub use pgm::{format_pgm, write_pgm};
