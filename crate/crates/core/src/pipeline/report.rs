//! Tables, images and summary statistics derived from trained artifacts.
//!
//! These are external-observer views: they use the geometry oracle and the
//! encoder inverse, which the agent itself never touches.

use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::codebook::PrototypeCodebook;
use crate::encoding::{EncoderBank, SensoryVector};
use crate::error::Result;
use crate::geometry::RetinaGeometry;
use crate::information::{MiAnalysis, MiTensor};
use crate::model::{JointCounts, PredictiveModel};
use crate::search::foveating_saccade;

/// How well the MI tensor reflects the retina's physical structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    /// (a, q) cases with a defined coupled partner.
    pub coupled_cases: usize,
    /// Fraction of those whose MI argmax over b is the coupled partner.
    pub argmax_agreement: f64,
    pub mean_mi_coupled: f64,
    pub mean_mi_uncoupled: f64,
    /// Mean H(S^fine | S^coarse, m) over coupled cross-layer pairs.
    pub mean_h_fine_given_coarse: f64,
    /// Mean H(S^coarse | S^fine, m) over the same pairs, reversed.
    pub mean_h_coarse_given_fine: f64,
    /// Layer-1 fields whose foveating saccade matches geometry.
    pub foveating_agreement: usize,
    pub layer1_fields: usize,
}

pub fn structure_summary(analysis: &MiAnalysis, geometry: &RetinaGeometry) -> StructureSummary {
    let mi = &analysis.mi;
    let (mut cases, mut hits) = (0usize, 0usize);
    let (mut coupled, mut n_coupled) = (0.0, 0usize);
    let (mut uncoupled, mut n_uncoupled) = (0.0, 0usize);
    let (mut fine_given_coarse, mut n_fgc) = (0.0, 0usize);
    let (mut coarse_given_fine, mut n_cgf) = (0.0, 0usize);
    for q in 0..geometry.n_motors() {
        for a in 0..geometry.n_fields() {
            let partner = geometry.coupled_partner(a, q);
            if let Some(b) = partner {
                cases += 1;
                hits += usize::from(mi.argmax_post(a, q) == b);
                let (la, lb) = (geometry.field(a).layer, geometry.field(b).layer);
                let h = analysis.h_post_given_pre.get(a, b, q);
                if la > lb {
                    fine_given_coarse += h;
                    n_fgc += 1;
                } else if la < lb {
                    coarse_given_fine += h;
                    n_cgf += 1;
                }
            }
            for b in 0..geometry.n_fields() {
                if Some(b) == partner {
                    coupled += mi.get(a, b, q);
                    n_coupled += 1;
                } else {
                    uncoupled += mi.get(a, b, q);
                    n_uncoupled += 1;
                }
            }
        }
    }
    let fovea = geometry.fovea_index;
    let ring = geometry.layer_fields(1);
    let foveating_agreement = ring
        .iter()
        .filter(|&&a| geometry.coupled_partner(a, foveating_saccade(mi, a, fovea)) == Some(fovea))
        .count();
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    StructureSummary {
        coupled_cases: cases,
        argmax_agreement: mean(hits as f64, cases),
        mean_mi_coupled: mean(coupled, n_coupled),
        mean_mi_uncoupled: mean(uncoupled, n_uncoupled),
        mean_h_fine_given_coarse: mean(fine_given_coarse, n_fgc),
        mean_h_coarse_given_fine: mean(coarse_given_fine, n_cgf),
        foveating_agreement,
        layer1_fields: ring.len(),
    }
}

/// `q,a,b,mi` rows, optionally followed by the two entropy columns.
pub fn write_mi_csv(analysis: &MiAnalysis, path: &Path, entropy_dump: bool) -> Result<()> {
    let mi = &analysis.mi;
    let mut w = csv::Writer::from_path(path)?;
    if entropy_dump {
        w.write_record(["q", "a", "b", "mi", "h_post", "h_post_given_pre"])?;
    } else {
        w.write_record(["q", "a", "b", "mi"])?;
    }
    for q in 0..mi.n_motors {
        for a in 0..mi.n_fields {
            for b in 0..mi.n_fields {
                let mut row = vec![q.to_string(), a.to_string(), b.to_string(), mi.get(a, b, q).to_string()];
                if entropy_dump {
                    row.push(analysis.h_post.get(a, b, q).to_string());
                    row.push(analysis.h_post_given_pre.get(a, b, q).to_string());
                }
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an MI table written by [`write_mi_csv`].
pub fn read_mi_csv(path: &Path, n_fields: usize, n_motors: usize) -> Result<MiTensor> {
    let mut t = MiTensor::zeros(n_fields, n_motors);
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| crate::error::Error::Malformed {
                    artifact: "mi table",
                    reason: format!("bad column {k} in {rec:?}"),
                })
        };
        let (q, a, b) = (parse(0)? as usize, parse(1)? as usize, parse(2)? as usize);
        if q >= n_motors || a >= n_fields || b >= n_fields {
            return Err(crate::error::Error::Malformed {
                artifact: "mi table",
                reason: format!("index out of range in {rec:?}"),
            });
        }
        t.set(a, b, q, parse(3)?);
    }
    Ok(t)
}

/// One grayscale image per saccade: rows are pre-fields, columns
/// post-fields, white is MI = 1.
pub fn mi_heatmap(mi: &MiTensor, q: usize, cell_px: u32) -> GrayImage {
    let n = mi.n_fields as u32;
    GrayImage::from_fn(n * cell_px, n * cell_px, |x, y| {
        let (a, b) = ((y / cell_px) as usize, (x / cell_px) as usize);
        Luma([(mi.get(a, b, q) * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn write_heatmaps(mi: &MiTensor, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    (0..mi.n_motors)
        .map(|q| {
            let path = dir.join(format!("mi_q{q}.png"));
            mi_heatmap(mi, q, 8).save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Conditional distributions of block `(a, b, q)` as CSV: one row per
/// pre-state with its observation count and probabilities over post-states.
pub fn write_block_csv(model: &PredictiveModel, a: usize, b: usize, q: usize, out: impl std::io::Write) -> Result<()> {
    let block = model.block(a, b, q);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["i".to_string(), "count".to_string(), "observed".to_string()];
    header.extend((0..block.cols()).map(|j| format!("p{j}")));
    w.write_record(&header)?;
    for i in 0..block.rows() {
        let row = model.conditional_row(a, b, q, i);
        let mut rec = vec![i.to_string(), block.row_sum(i).to_string(), u8::from(row.observed).to_string()];
        rec.extend(row.probs.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A predicted post-state with its decoded visual feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub j: usize,
    pub prob: f64,
    pub prototype: Vec<f64>,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryCell {
    pub q: usize,
    pub b: usize,
    pub candidates: Vec<Candidate>,
}

/// A pre-state surrounded by what each saccade turns it into.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryTile {
    pub a: usize,
    pub i: usize,
    pub prototype: Vec<f64>,
    pub feature: Vec<f64>,
    pub cells: Vec<GalleryCell>,
}

/// For each pre-state and saccade, takes the post-field with the highest MI
/// and its `top_k` most probable post-states.
pub fn render_association_gallery(
    model: &PredictiveModel,
    mi: &MiTensor,
    codebook: &PrototypeCodebook,
    bank: &EncoderBank,
    pre_states: &[(usize, usize)],
    top_k: usize,
) -> Result<Vec<GalleryTile>> {
    let decode = |a: usize, i: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let proto = codebook.fields[a].centroid(i).to_vec();
        let feature = bank.decode(a, &SensoryVector { values: proto.clone() })?;
        Ok((proto, feature))
    };
    pre_states
        .iter()
        .map(|&(a, i)| {
            let (prototype, feature) = decode(a, i)?;
            let cells = (0..mi.n_motors)
                .map(|q| {
                    let b = mi.argmax_post(a, q);
                    let row = model.conditional_row(a, b, q, i);
                    let mut order: Vec<usize> = (0..row.probs.len()).collect();
                    order.sort_by(|&x, &y| row.probs[y].total_cmp(&row.probs[x]).then(x.cmp(&y)));
                    let candidates = order
                        .into_iter()
                        .take(top_k)
                        .map(|j| {
                            let (prototype, feature) = decode(b, j)?;
                            Ok(Candidate { j, prob: row.probs[j], prototype, feature })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(GalleryCell { q, b, candidates })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GalleryTile { a, i, prototype, feature, cells })
        })
        .collect()
}

/// The `per_field` most frequent pre-states of each field after skipping
/// the `skip` most frequent ones.
pub fn pick_gallery_states(model: &PredictiveModel, fields: &[usize], per_field: usize, skip: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &a in fields {
        let block = model.block(a, a, 0);
        let mut order: Vec<(u64, usize)> = (0..block.rows()).map(|i| (block.row_sum(i), i)).collect();
        order.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        out.extend(order.into_iter().skip(skip).take(per_field).filter(|(c, _)| *c > 0).map(|(_, i)| (a, i)));
    }
    out
}

fn square_side(len: usize) -> usize {
    (len as f64).sqrt().round() as usize
}

/// Draws `values` (a square image, row-major) into `img` at (x0, y0),
/// scaled to `size` pixels per side.
fn blit(img: &mut GrayImage, values: &[f64], x0: u32, y0: u32, size: u32) {
    let side = square_side(values.len()).max(1) as u32;
    for y in 0..size {
        for x in 0..size {
            let v = values[((y * side / size) * side + x * side / size) as usize];
            img.put_pixel(x0 + x, y0 + y, Luma([v.round().clamp(0.0, 255.0) as u8]));
        }
    }
}

/// 3×3 layout: the pre-state in the middle, each saccade's prediction in the
/// direction of the saccade. Every slot shows prototype | decoded feature
/// for each of the top-k candidates, stacked vertically.
pub fn tile_image(tile: &GalleryTile, geometry: &RetinaGeometry, window_px: u32, scale: u32) -> GrayImage {
    let patch = window_px * scale;
    let gap = scale.max(2);
    let k = tile.cells.iter().map(|c| c.candidates.len()).max().unwrap_or(1).max(1) as u32;
    let slot_w = 2 * patch + 3 * gap;
    let slot_h = k * (patch + gap) + gap;
    let mut img = GrayImage::from_pixel(3 * slot_w, 3 * slot_h, Luma([96]));
    let origin = |row: u32, col: u32| (col * slot_w + gap, row * slot_h + gap);
    let (x, y) = origin(1, 1);
    blit(&mut img, &tile.prototype, x, y, patch);
    blit(&mut img, &tile.feature, x + patch + gap, y, patch);
    for cell in &tile.cells {
        let (dr, dc) = geometry.motors[cell.q].displacement;
        let (x, y) = origin((1 + dr) as u32, (1 + dc) as u32);
        for (n, c) in cell.candidates.iter().enumerate() {
            let yy = y + n as u32 * (patch + gap);
            blit(&mut img, &c.prototype, x, yy, patch);
            blit(&mut img, &c.feature, x + patch + gap, yy, patch);
        }
    }
    img
}

/// Writes one PNG per tile plus `gallery.csv` with the probabilities.
pub fn write_gallery(tiles: &[GalleryTile], geometry: &RetinaGeometry, dir: &Path, scale: u32) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut paths = Vec::new();
    let csv_path = dir.join("gallery.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["tile", "a", "i", "q", "b", "rank", "j", "prob"])?;
    for (t, tile) in tiles.iter().enumerate() {
        for cell in &tile.cells {
            for (rank, c) in cell.candidates.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    tile.a.to_string(),
                    tile.i.to_string(),
                    cell.q.to_string(),
                    cell.b.to_string(),
                    rank.to_string(),
                    c.j.to_string(),
                    format!("{:.6}", c.prob),
                ])?;
            }
        }
        let path = dir.join(format!("tile{t}_a{}_i{}.png", tile.a, tile.i));
        tile_image(tile, geometry, geometry.rf_window_px as u32, scale).save(&path)?;
        paths.push(path);
    }
    w.flush()?;
    paths.push(csv_path);
    Ok(paths)
}
