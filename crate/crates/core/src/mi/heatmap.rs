use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, ArrayView1, ArrayView3, Axis};

use super::StatisticsNetwork;
use crate::error::{Error, Result};

/// Pointwise scores of one image's global vector against another image's
/// local grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PmiHeatmap {
    pub raw: Array2<f64>,
    /// Softmax of `raw` over locations.
    pub normalized: Array2<f64>,
    pub source: usize,
    pub target: usize,
    /// False when the statistics network never took a gradient step.
    pub trained: bool,
}

/// Softmax over every cell of a grid.
pub fn softmax_grid(raw: &Array2<f64>) -> Array2<f64> {
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = raw.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

pub fn pmi_heatmap(
    net: &StatisticsNetwork,
    global: ArrayView1<'_, f32>,
    local: ArrayView3<'_, f32>,
    source: usize,
    target: usize,
) -> Result<PmiHeatmap> {
    let (h, w, c) = local.dim();
    let cells = h * w;
    let g = global.insert_axis(Axis(0));
    let gx = ndarray::concatenate(Axis(0), &vec![g; cells]).map_err(|e| Error::Shape(e.to_string()))?;
    let lx = local
        .to_shape((cells, c))
        .map_err(|e| Error::Shape(e.to_string()))?
        .to_owned();
    let scores = net.scores(&gx, &lx)?;
    let raw = Array2::from_shape_vec((h, w), scores).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(PmiHeatmap {
        normalized: softmax_grid(&raw),
        raw,
        source,
        target,
        trained: net.trained_steps > 0,
    })
}

/// Mean normalised score over part cells divided by the mean over all cells.
pub fn parts_ratio(normalized: &Array2<f64>, parts: &Array2<bool>) -> Result<f64> {
    if normalized.dim() != parts.dim() {
        return Err(Error::Shape(format!("heatmap {:?} vs part map {:?}", normalized.dim(), parts.dim())));
    }
    // means as offsets from one cell, exact for a constant map
    let base = normalized.iter().next().copied().unwrap_or(0.0);
    let hits: Vec<f64> = normalized.iter().zip(parts).filter(|(_, &p)| p).map(|(v, _)| v - base).collect();
    if hits.is_empty() {
        return Err(Error::Degenerate("no cell contains a part".into()));
    }
    let part_mean = base + hits.iter().sum::<f64>() / hits.len() as f64;
    let all_mean = base + normalized.iter().map(|v| v - base).sum::<f64>() / normalized.len() as f64;
    Ok(part_mean / all_mean)
}

fn to_u8(v: f64, lo: f64, hi: f64) -> u8 {
    if hi > lo {
        (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
    } else {
        0
    }
}

/// Writes `<stem>_raw.png` (min-max scaled raw grid, upsampled to the image),
/// `<stem>_overlay.png` (normalised map tinted over `image`) and
/// `<stem>_scores.tsv` (raw and normalised values per cell).
pub fn render_heatmap(map: &PmiHeatmap, image: &RgbImage, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (gh, gw) = map.raw.dim();
    let (iw, ih) = image.dimensions();
    let cell = |x: u32, y: u32| ((y as usize * gh / ih as usize).min(gh - 1), (x as usize * gw / iw as usize).min(gw - 1));
    let (rlo, rhi) = min_max(&map.raw);
    let raw = GrayImage::from_fn(iw, ih, |x, y| Luma([to_u8(map.raw[cell(x, y)], rlo, rhi)]));
    let (nlo, nhi) = min_max(&map.normalized);
    let overlay = RgbImage::from_fn(iw, ih, |x, y| {
        let a = to_u8(map.normalized[cell(x, y)], nlo, nhi) as f64 / 255.0;
        let p = image.get_pixel(x, y).0;
        let mix = |c: u8, t: f64| (c as f64 * (1.0 - 0.6 * a) + t * 0.6 * a).round() as u8;
        Rgb([mix(p[0], 255.0), mix(p[1], 0.0), mix(p[2], 0.0)])
    });
    let raw_path = dir.join(format!("{stem}_raw.png"));
    let overlay_path = dir.join(format!("{stem}_overlay.png"));
    let tsv_path = dir.join(format!("{stem}_scores.tsv"));
    raw.save(&raw_path).map_err(|e| Error::image(&raw_path, e))?;
    overlay.save(&overlay_path).map_err(|e| Error::image(&overlay_path, e))?;
    let mut tsv = format!("# source={} target={} trained={}\nrow\tcol\traw\tnormalized\n", map.source, map.target, map.trained);
    for ((r, c), v) in map.raw.indexed_iter() {
        tsv.push_str(&format!("{r}\t{c}\t{v:.9}\t{:.9}\n", map.normalized[[r, c]]));
    }
    std::fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))?;
    Ok(vec![raw_path, overlay_path, tsv_path])
}

fn min_max(a: &Array2<f64>) -> (f64, f64) {
    a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_heatmap_has_unit_ratio() {
        let n = softmax_grid(&Array2::from_elem((3, 4), 2.5));
        let mut parts = Array2::from_elem((3, 4), false);
        parts[[1, 2]] = true;
        parts[[0, 0]] = true;
        assert_eq!(parts_ratio(&n, &parts).unwrap(), 1.0);
    }

    #[test]
    fn all_mass_on_parts_gives_inverse_fraction() {
        let mut n = Array2::zeros((2, 2));
        n[[0, 0]] = 1.0;
        let mut parts = Array2::from_elem((2, 2), false);
        parts[[0, 0]] = true;
        assert!((parts_ratio(&n, &parts).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_part_union_is_rejected() {
        let n = softmax_grid(&Array2::zeros((2, 2)));
        assert!(parts_ratio(&n, &Array2::from_elem((2, 2), false)).is_err());
    }

    #[test]
    fn rendering_writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let raw = ndarray::array![[0.0, 1.0], [2.0, 3.0]];
        let map = PmiHeatmap {
            normalized: softmax_grid(&raw),
            raw,
            source: 0,
            target: 1,
            trained: false,
        };
        let img = RgbImage::from_pixel(8, 8, Rgb([10, 20, 30]));
        let files = render_heatmap(&map, &img, dir.path(), "pair").unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let tsv = std::fs::read_to_string(&files[2]).unwrap();
        assert!(tsv.contains("trained=false"));
    }
}
