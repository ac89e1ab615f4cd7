//! File formats: little-endian binary interchange for rasters, plain-text
//! tables for poses and other small records, ASCII PLY for point clouds.

mod binary;
mod text;

pub use binary::*;
pub use text::*;

/// Format identifiers and versions understood by this build.
pub const FORMAT_VERSIONS: [(&str, &str); 9] = [
    ("raw frame", "DRKRAW1"),
    ("linear image", "DRKIMG1"),
    ("feature map", "DRKFTR1"),
    ("pointmap", "DRKPTS1"),
    ("raw import", "PGM P5 16-bit"),
    ("poses", "text: name tx ty tz qx qy qz qw"),
    ("correspondences", "text: x1 y1 x2 y2 score"),
    ("noise samples", "csv: channel,mean,variance"),
    ("point cloud", "PLY ascii 1.0"),
];
