use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use llf_core::camera::load_calibration;
use llf_core::{CameraModel, Error};

use crate::CalibArgs;

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

pub fn parse_image_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

pub fn load_cameras(args: &CalibArgs) -> anyhow::Result<Vec<CameraModel>> {
    let all = load_calibration(&args.calib, args.image_size)?;
    if args.cameras.is_empty() {
        return Ok(all);
    }
    args.cameras
        .iter()
        .map(|id| {
            all.iter()
                .find(|c| &c.camera_id == id)
                .cloned()
                .ok_or_else(|| config_error(format!("camera {id:?} not in {}", args.calib.display())))
        })
        .collect()
}

pub fn stem(path: &Path) -> String {
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    name.split('.').next().unwrap_or_default().to_string()
}

/// `dir/<scan>.<ext>` when `root` is a directory, else `root` itself.
pub fn scan_file(root: &Path, scan: &str, ext: &str) -> PathBuf {
    if root.is_dir() {
        root.join(format!("{scan}.{ext}"))
    } else {
        root.to_path_buf()
    }
}

/// Files with extension `ext` in a directory (sorted), or the single file.
pub fn list_files(root: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Invalid(format!("no .{ext} files in {}", root.display())).into());
    }
    Ok(out)
}

pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}
