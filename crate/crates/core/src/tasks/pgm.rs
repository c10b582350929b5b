use std::fs;
use std::path::{Path, PathBuf};

use super::ClassPool;
use crate::error::{Error, Result};

fn pool_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::ImagePool {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads an 8-bit binary PGM (P5). Returns `(width, height, pixels)` with
/// pixels scaled to `[0, 1]` by the file's maxval.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes).as_deref() != Some("P5") {
        return Err(pool_err(path, "not a binary PGM (P5) file"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token(&bytes)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| pool_err(path, format!("bad PGM header: {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(pool_err(path, format!("maxval {maxval} is not 8-bit")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = width * height;
    if bytes.len() < start + n {
        return Err(pool_err(path, "truncated raster"));
    }
    let pixels = bytes[start..start + n]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Ok((width, height, pixels))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.retain(|p| {
        !p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'))
    });
    entries.sort();
    Ok(entries)
}

/// One class per sub-directory of `root` (sorted by name); every file in a
/// class directory must be a P5 image of the same size as all others.
pub fn load_image_pool(root: &Path) -> Result<ClassPool> {
    let mut classes = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut examples = Vec::new();
        for file in sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| p.is_file())
        {
            let (w, h, pixels) = read_pgm(&file)?;
            match dims {
                None => dims = Some((w, h)),
                Some(d) if d != (w, h) => {
                    return Err(pool_err(
                        &file,
                        format!("image is {w}x{h}, expected {}x{}", d.0, d.1),
                    ))
                }
                Some(_) => {}
            }
            examples.push(pixels);
        }
        if examples.is_empty() {
            return Err(pool_err(&class_dir, "class directory holds no images"));
        }
        classes.push((name, examples));
    }
    if classes.is_empty() {
        return Err(pool_err(root, "no class directories"));
    }
    let (w, h) = dims.expect("at least one image");
    ClassPool::new(w * h, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pgm(path: &Path, w: usize, h: usize, fill: u8) {
        let mut bytes = format!("P5\n# test image\n{w} {h}\n255\n").into_bytes();
        bytes.extend(std::iter::repeat_n(fill, w * h));
        fs::write(path, bytes).unwrap();
    }

    fn make_dataset(root: &Path) {
        for (c, name) in ["beta", "alpha"].iter().enumerate() {
            let d = root.join(name);
            fs::create_dir_all(&d).unwrap();
            for i in 0..3 {
                write_pgm(&d.join(format!("{i}.pgm")), 8, 8, (c * 100 + i) as u8);
            }
        }
    }

    #[test]
    fn loads_two_classes_of_64_features() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path());
        let pool = load_image_pool(dir.path()).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.dim(), 64);
        assert_eq!(pool.classes()[0].name, "alpha");
        assert_eq!(pool.classes()[0].examples.len(), 3);
        assert!((pool.classes()[0].examples[1][0] - 101.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn full_intensity_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write_pgm(&p, 2, 2, 255);
        let (_, _, px) = read_pgm(&p).unwrap();
        assert_eq!(px, vec![1.0; 4]);
    }

    #[test]
    fn ordering_is_independent_of_creation_order() {
        let a = tempfile::tempdir().unwrap();
        make_dataset(a.path());
        let b = tempfile::tempdir().unwrap();
        // Reverse creation order.
        for (c, name) in ["alpha", "beta"].iter().enumerate() {
            let d = b.path().join(name);
            fs::create_dir_all(&d).unwrap();
            for i in (0..3).rev() {
                write_pgm(&d.join(format!("{i}.pgm")), 8, 8, ((1 - c) * 100 + i) as u8);
            }
        }
        assert_eq!(
            load_image_pool(a.path()).unwrap(),
            load_image_pool(b.path()).unwrap()
        );
    }

    #[test]
    fn mixed_sizes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path());
        write_pgm(&dir.path().join("beta").join("9.pgm"), 4, 4, 0);
        let err = load_image_pool(dir.path()).unwrap_err().to_string();
        assert!(err.contains("expected 8x8"), "{err}");
    }

    #[test]
    fn non_p5_rejected() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path());
        fs::write(
            dir.path().join("alpha").join("note.pgm"),
            b"P2\n1 1\n255\n0\n",
        )
        .unwrap();
        assert!(load_image_pool(dir.path()).is_err());
    }

    #[test]
    fn empty_class_rejected() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path());
        fs::create_dir_all(dir.path().join("gamma")).unwrap();
        let err = load_image_pool(dir.path()).unwrap_err().to_string();
        assert!(err.contains("no images"), "{err}");
    }
}
