//! Plain-text on-disk layout, one directory per dataset:
//!
//! ```text
//! <root>/<name>/manifest.txt    image_path<TAB>class_index
//! <root>/<name>/attributes.txt  whitespace-separated floats, one class per line
//! <root>/<name>/split.txt       "train: i,j,..." and "test: k,..."
//! <root>/<name>/parts.txt       optional: image_index part_index x y visible
//! ```
//!
//! Image paths are relative to the dataset directory. Images are resized to
//! the preprocessing resize side on load; part clicks are rescaled with them.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::Array2;

use super::parts::{Click, PartAnnotations};
use super::{DatasetBundle, Split};
use crate::error::{Error, Result};

/// Expected dataset sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub images: usize,
    pub attributes: usize,
    pub classes: usize,
    pub train_classes: usize,
    pub test_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetId {
    Cub,
    Awa2,
    Sun,
    Other(String),
}

impl DatasetId {
    pub fn parse(name: &str) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "cub" => DatasetId::Cub,
            "awa2" | "awa" => DatasetId::Awa2,
            "sun" => DatasetId::Sun,
            other => DatasetId::Other(other.to_string()),
        }
    }

    pub fn dir_name(&self) -> &str {
        match self {
            DatasetId::Cub => "cub",
            DatasetId::Awa2 => "awa2",
            DatasetId::Sun => "sun",
            DatasetId::Other(s) => s,
        }
    }

    pub fn manifest(&self) -> Option<Manifest> {
        let m = |images, attributes, classes, train_classes, test_classes| Manifest {
            images,
            attributes,
            classes,
            train_classes,
            test_classes,
        };
        match self {
            DatasetId::Cub => Some(m(11_788, 312, 200, 150, 50)),
            DatasetId::Awa2 => Some(m(30_475, 85, 50, 40, 10)),
            DatasetId::Sun => Some(m(14_340, 102, 717, 645, 72)),
            DatasetId::Other(_) => None,
        }
    }

    pub fn num_parts(&self) -> Option<usize> {
        match self {
            DatasetId::Cub => Some(15),
            _ => None,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_manifest(path: &Path) -> Result<Vec<(PathBuf, usize)>> {
    let text = read(path)?;
    content_lines(&text)
        .map(|(n, line)| {
            let (p, c) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err(path, n, "expected `image_path<TAB>class_index`"))?;
            let class = c
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(path, n, format!("bad class index: {e}")))?;
            Ok((PathBuf::from(p), class))
        })
        .collect()
}

pub(crate) fn parse_attributes(path: &Path) -> Result<Array2<f64>> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in content_lines(&text) {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(path, n, format!("bad float `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, n, format!("{} columns, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub(crate) fn parse_split(path: &Path) -> Result<Split> {
    let text = read(path)?;
    let (mut train, mut test) = (None, None);
    for (n, line) in content_lines(&text) {
        let (key, list) = line
            .split_once(':')
            .ok_or_else(|| parse_err(path, n, "expected `train: ...` or `test: ...`"))?;
        let ids = list
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>().map_err(|e| parse_err(path, n, format!("bad class `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match key.trim() {
            "train" => train = Some(ids),
            "test" => test = Some(ids),
            other => return Err(parse_err(path, n, format!("unknown split `{other}`"))),
        }
    }
    match (train, test) {
        (Some(tr), Some(te)) => Split::new(tr, te),
        _ => Err(parse_err(path, 0, "split file needs both `train:` and `test:` lines")),
    }
}

pub(crate) fn parse_parts(path: &Path, num_images: usize, num_parts: Option<usize>) -> Result<PartAnnotations> {
    let text = read(path)?;
    let mut entries = Vec::new();
    let mut max_part = 0usize;
    for (n, line) in content_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(parse_err(path, n, "expected `image_index part_index x y visible`"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| parse_err(path, n, e.to_string()));
        let float = |s: &str| s.parse::<f64>().map_err(|e| parse_err(path, n, e.to_string()));
        let (img, part) = (int(f[0])?, int(f[1])?);
        if img >= num_images {
            return Err(parse_err(path, n, format!("image index {img} out of range")));
        }
        let visible = match f[4] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(parse_err(path, n, format!("bad visibility `{other}`"))),
        };
        max_part = max_part.max(part);
        entries.push((img, part, Click::new(float(f[2])?, float(f[3])?, visible)));
    }
    let num_parts = num_parts.unwrap_or(max_part + 1);
    let mut ann = PartAnnotations::empty(num_images, num_parts);
    for (img, part, click) in entries {
        if part >= num_parts {
            return Err(parse_err(path, 0, format!("part index {part} exceeds {num_parts} parts")));
        }
        ann.clicks[img][part].push(click);
    }
    Ok(ann)
}

/// Loads `<root>/<name>` and checks it against the known manifest, if any.
pub fn load_zsl_dataset(root: &Path, name: &str, resize: usize) -> Result<DatasetBundle> {
    let id = DatasetId::parse(name);
    let dir = root.join(id.dir_name());
    let split_path = dir.join("split.txt");
    if !split_path.exists() {
        return Err(Error::Dataset(format!("missing split file {}", split_path.display())));
    }
    let split = parse_split(&split_path)?;
    let attributes = parse_attributes(&dir.join("attributes.txt"))?;
    let entries = parse_manifest(&dir.join("manifest.txt"))?;

    let mut images = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    let mut scales = Vec::with_capacity(entries.len());
    for (rel, class) in entries {
        let path = dir.join(&rel);
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        scales.push((resize as f64 / w as f64, resize as f64 / h as f64));
        images.push(if w as usize == resize && h as usize == resize {
            img
        } else {
            image::imageops::resize(&img, resize as u32, resize as u32, FilterType::Triangle)
        });
        labels.push(class);
    }

    let parts_path = dir.join("parts.txt");
    let parts = if parts_path.exists() {
        let mut ann = parse_parts(&parts_path, images.len(), id.num_parts())?;
        ann.rescale(&scales);
        Some(ann)
    } else {
        None
    };

    let bundle = DatasetBundle::new(id.dir_name(), images, labels, attributes, split, parts)?;
    if let Some(m) = id.manifest() {
        check_manifest(&bundle, &m)?;
    }
    Ok(bundle)
}

/// Writes `bundle` under `<root>/<name>` in the layout read by
/// [`load_zsl_dataset`], images as PNG.
pub fn save_zsl_dataset(bundle: &DatasetBundle, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&bundle.name);
    let img_dir = dir.join("img");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    let mut manifest = String::new();
    for (i, (img, label)) in bundle.images.iter().zip(&bundle.labels).enumerate() {
        let rel = format!("img/{i:05}.png");
        let p = dir.join(&rel);
        img.save(&p).map_err(|e| Error::image(&p, e))?;
        manifest.push_str(&format!("{rel}\t{label}\n"));
    }
    write("manifest.txt", manifest)?;
    let attributes: String = bundle
        .attributes
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    write("attributes.txt", attributes)?;
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    write(
        "split.txt",
        format!("train: {}\ntest: {}\n", list(&bundle.split.train), list(&bundle.split.test)),
    )?;
    if let Some(parts) = &bundle.parts {
        let mut body = String::new();
        for (i, per_part) in parts.clicks.iter().enumerate() {
            for (p, clicks) in per_part.iter().enumerate() {
                for c in clicks {
                    body.push_str(&format!("{i} {p} {} {} {}\n", c.x, c.y, u8::from(c.visible)));
                }
            }
        }
        write("parts.txt", body)?;
    }
    Ok(dir)
}

pub(crate) fn check_manifest(b: &DatasetBundle, m: &Manifest) -> Result<()> {
    let got = Manifest {
        images: b.len(),
        attributes: b.num_attributes(),
        classes: b.num_classes(),
        train_classes: b.split.train.len(),
        test_classes: b.split.test.len(),
    };
    if &got != m {
        return Err(Error::Dataset(format!(
            "{}: counts {got:?} do not match the expected {m:?}",
            b.name
        )));
    }
    Ok(())
}
