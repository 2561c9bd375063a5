//! PNG dataset layout: `root/real/*.png` and `root/fake/<generator_id>/*.png`.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use super::{Image, Label, LabeledImageSet, CHANNELS};
use crate::error::{Error, Result};

/// Loaded set plus one warning line per file that failed to decode.
#[derive(Debug)]
pub struct LoadReport {
    pub set: LabeledImageSet,
    pub warnings: Vec<String>,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn decode(path: &Path, label: Label, generator: Option<&str>) -> std::result::Result<Image, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(format!("not square ({w}x{h})"));
    }
    let size = w as usize;
    let plane = size * size;
    let mut pixels = vec![0f32; CHANNELS * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..CHANNELS {
            pixels[c * plane + i] = p[c] as f32 / 255.0;
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let id = match generator {
        Some(g) => format!("{g}/{stem}"),
        None => stem.to_string(),
    };
    Image::new(id, label, generator.map(String::from), size, pixels).map_err(|e| e.to_string())
}

pub fn load_dataset(root: &Path) -> Result<LoadReport> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let mut jobs: Vec<(PathBuf, Label, Option<String>)> = Vec::new();
    let real = root.join("real");
    if real.is_dir() {
        jobs.extend(png_files(&real)?.into_iter().map(|p| (p, Label::Real, None)));
    }
    let fake = root.join("fake");
    if fake.is_dir() {
        let mut gens: Vec<PathBuf> = std::fs::read_dir(&fake)
            .map_err(|e| Error::io(&fake, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        gens.sort();
        for g in gens {
            let name = g.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            jobs.extend(png_files(&g)?.into_iter().map(|p| (p, Label::Fake, Some(name.clone()))));
        }
    }
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    let mut resolution = None;
    for (path, label, generator) in jobs {
        match decode(&path, label, generator.as_deref()) {
            Ok(img) => {
                let res = *resolution.get_or_insert(img.size());
                if img.size() != res {
                    warnings.push(format!(
                        "{}: resolution {} differs from {res}",
                        path.display(),
                        img.size()
                    ));
                } else {
                    items.push(img);
                }
            }
            Err(e) => warnings.push(format!("{}: {e}", path.display())),
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset(format!("no decodable images under {}", root.display())));
    }
    Ok(LoadReport {
        set: LabeledImageSet::new(items),
        warnings,
    })
}

/// Decode one PNG for inference. The label is a placeholder (real) and the
/// id is the file stem.
pub fn load_png(path: &Path) -> Result<Image> {
    decode(path, Label::Real, None).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

/// Sorted PNG files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    png_files(dir)
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let size = img.size();
    let plane = size * size;
    let px = img.pixels();
    let buf: RgbImage = ImageBuffer::from_fn(size as u32, size as u32, |x, y| {
        let i = y as usize * size + x as usize;
        Rgb([0, 1, 2].map(|c| (px[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8))
    });
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

/// Write a set in the dataset layout. Ids containing `/` keep only the last
/// component as the file stem.
pub fn save_dataset(set: &LabeledImageSet, root: &Path) -> Result<()> {
    for img in &set.items {
        let stem = img.id.rsplit('/').next().unwrap_or(&img.id);
        let path = match (&img.label, &img.generator) {
            (Label::Real, _) => root.join("real").join(format!("{stem}.png")),
            (Label::Fake, Some(g)) => root.join("fake").join(g).join(format!("{stem}.png")),
            (Label::Fake, None) => unreachable!("fake images always carry a generator id"),
        };
        save_png(img, &path)?;
    }
    Ok(())
}
