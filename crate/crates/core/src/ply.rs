//! Colored PLY export for inspecting labelings and segments.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::labels::PanopticLabeling;
use crate::segment::LidarSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

/// Color for id 0 (void / unassigned).
pub const VOID_COLOR: [u8; 3] = [128, 128, 128];

/// Deterministic color for an id via a splitmix64 hash; id 0 is gray.
pub fn color_for_id(id: u32) -> [u8; 3] {
    if id == 0 {
        return VOID_COLOR;
    }
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    // keep channels away from the void gray and from black
    [
        64 + (z & 0xBF) as u8,
        64 + ((z >> 8) & 0xBF) as u8,
        64 + ((z >> 16) & 0xBF) as u8,
    ]
}

/// What to color points by.
pub enum ColorSource<'a> {
    /// Full label word, so instances of different classes get different colors.
    Labeling(&'a PanopticLabeling),
    /// Segment position + 1; points outside every segment are void.
    Segments(&'a [LidarSegment]),
}

fn point_ids(cloud: &PointCloud, source: &ColorSource) -> Result<Vec<u32>> {
    match source {
        ColorSource::Labeling(l) => {
            l.ensure_len(cloud.len())?;
            Ok(l.labels().iter().map(|l| l.to_word()).collect())
        }
        ColorSource::Segments(segs) => {
            let mut ids = vec![0u32; cloud.len()];
            for (k, s) in segs.iter().enumerate() {
                s.check_bounds(cloud.len())?;
                for &p in &s.point_indices {
                    ids[p as usize] = k as u32 + 1;
                }
            }
            Ok(ids)
        }
    }
}

pub fn encode_ply(cloud: &PointCloud, source: &ColorSource, encoding: PlyEncoding) -> Result<Vec<u8>> {
    let ids = point_ids(cloud, source)?;
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .expect("write to Vec");
    for (p, &id) in cloud.points().iter().zip(&ids) {
        let [r, g, b] = color_for_id(id);
        match encoding {
            PlyEncoding::Ascii => {
                writeln!(out, "{} {} {} {r} {g} {b}", p.x, p.y, p.z).expect("write to Vec");
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&[r, g, b]);
            }
        }
    }
    Ok(out)
}

pub fn export_ply(cloud: &PointCloud, source: &ColorSource, encoding: PlyEncoding, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, source, encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use crate::labels::PanopticLabel;

    fn two_points() -> (PointCloud, PanopticLabeling) {
        let cloud = PointCloud::new(
            "s",
            vec![Point::new(0.0, 0.0, 0.0, 0.0), Point::new(1.0, 2.0, 3.0, 0.0)],
        )
        .unwrap();
        let l = PanopticLabeling::new(vec![PanopticLabel::new(1, 1), PanopticLabel::new(1, 2)]);
        (cloud, l)
    }

    #[test]
    fn two_instances_get_distinct_colors() {
        let (cloud, l) = two_points();
        let text = String::from_utf8(encode_ply(&cloud, &ColorSource::Labeling(&l), PlyEncoding::Ascii).unwrap()).unwrap();
        assert!(text.contains("element vertex 2\n"));
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body.len(), 2);
        let color = |line: &str| line.split(' ').skip(3).collect::<Vec<_>>().join(" ");
        assert_ne!(color(body[0]), color(body[1]));
    }

    #[test]
    fn empty_cloud_has_header_only() {
        let cloud = PointCloud::default();
        let l = PanopticLabeling::default();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let bytes = encode_ply(&cloud, &ColorSource::Labeling(&l), enc).unwrap();
            let text = String::from_utf8(bytes).unwrap();
            assert!(text.starts_with("ply\n"));
            assert!(text.contains("element vertex 0\n"));
            assert!(text.ends_with("end_header\n"));
        }
    }

    #[test]
    fn binary_layout_and_determinism() {
        let (cloud, l) = two_points();
        let a = encode_ply(&cloud, &ColorSource::Labeling(&l), PlyEncoding::BinaryLittleEndian).unwrap();
        let b = encode_ply(&cloud, &ColorSource::Labeling(&l), PlyEncoding::BinaryLittleEndian).unwrap();
        assert_eq!(a, b);
        let header_len = a.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        assert_eq!(a.len() - header_len, 2 * 15);
    }

    #[test]
    fn void_is_gray_and_colors_avoid_it() {
        assert_eq!(color_for_id(0), VOID_COLOR);
        for id in 1..2000 {
            assert_ne!(color_for_id(id), VOID_COLOR);
        }
    }
}
