//! Training patch preparation: fixed-size windows over aligned tile
//! rasters, validity bookkeeping, forest filtering, and block-reduced PAD
//! profile targets.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::raster::{io::write_binary_files, GridSpec, MaskRaster, MetricRaster};
use crate::voxel::PadGrid;

/// Default patch edge, pixels.
pub const PATCH_SIZE: usize = 224;

/// Block-reduced PAD profile attached to a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PadProfile {
    /// Vertical layers.
    pub layers: usize,
    /// Spatial edge of the reduced window (patch / factor).
    pub size: usize,
    /// Reduction factor relative to patch pixels.
    pub factor: usize,
    /// (size, size, layers); NaN where a block saw no valid PAD cells.
    pub values: Array3<f64>,
}

/// One training window cut from a tile.
#[derive(Debug, Clone)]
pub struct Patch {
    pub tile_id: String,
    pub row0: usize,
    pub col0: usize,
    pub channels: BTreeMap<String, Array2<f64>>,
    pub valid: Array2<bool>,
    pub valid_fraction: f64,
    pub pad_profile: Option<PadProfile>,
}

/// The patches extracted from one tile plus the extraction settings.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub source_grid: GridSpec,
    pub patch_size: usize,
    pub stride: usize,
    pub min_valid_fraction: f64,
}

/// Cuts `patch_size` windows at `stride` spacing. Windows must fit whole;
/// partial windows at the right/bottom edges are dropped so target
/// statistics stay unbiased.
pub fn extract_patches(
    tile_id: &str,
    channels: &BTreeMap<String, MetricRaster>,
    mask: &MaskRaster,
    patch_size: usize,
    stride: usize,
) -> Result<PatchSet> {
    if stride == 0 {
        return Err(Error::InvalidParameter {
            name: "stride",
            message: "must be >= 1".into(),
        });
    }
    if patch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "patch",
            message: "must be >= 1".into(),
        });
    }
    let grid = &mask.grid;
    for (name, raster) in channels {
        if raster.grid.width != grid.width
            || raster.grid.height != grid.height
            || (raster.grid.cell_size - grid.cell_size).abs() > 1e-9
        {
            return Err(Error::GridMismatch(format!(
                "channel `{name}` grid differs from the mask grid"
            )));
        }
    }
    if patch_size > grid.width || patch_size > grid.height {
        return Err(Error::InvalidParameter {
            name: "patch",
            message: format!(
                "patch {patch_size} exceeds tile {}x{}",
                grid.height, grid.width
            ),
        });
    }

    let offsets = |dim: usize| -> Vec<usize> {
        (0..)
            .map(|i| i * stride)
            .take_while(|&o| o + patch_size <= dim)
            .collect()
    };

    let mut patches = Vec::new();
    for &row0 in &offsets(grid.height) {
        for &col0 in &offsets(grid.width) {
            let window = ndarray::s![row0..row0 + patch_size, col0..col0 + patch_size];
            let valid = mask.valid.slice(window).to_owned();
            let valid_count = valid.iter().filter(|&&v| v).count();
            let valid_fraction = valid_count as f64 / (patch_size * patch_size) as f64;
            let mut patch_channels = BTreeMap::new();
            for (name, raster) in channels {
                patch_channels.insert(name.clone(), raster.values.slice(window).to_owned());
            }
            patches.push(Patch {
                tile_id: tile_id.to_string(),
                row0,
                col0,
                channels: patch_channels,
                valid,
                valid_fraction,
                pad_profile: None,
            });
        }
    }

    Ok(PatchSet {
        patches,
        source_grid: grid.clone(),
        patch_size,
        stride,
        min_valid_fraction: 0.0,
    })
}

/// Keeps patches whose valid fraction is at least `min_valid_fraction`
/// (boundary inclusive), preserving order.
pub fn filter_patches(mut set: PatchSet, min_valid_fraction: f64) -> Result<PatchSet> {
    if !(0.0..=1.0).contains(&min_valid_fraction) {
        return Err(Error::InvalidParameter {
            name: "min_valid_fraction",
            message: format!("must lie in [0, 1], got {min_valid_fraction}"),
        });
    }
    set.patches
        .retain(|p| p.valid_fraction >= min_valid_fraction);
    set.min_valid_fraction = min_valid_fraction;
    Ok(set)
}

/// Optional forest filter: keeps patches where at least `min_cover` of the
/// valid pixels exceed `height_threshold` in the named height channel.
pub fn filter_patches_by_canopy_cover(
    mut set: PatchSet,
    channel: &str,
    height_threshold: f64,
    min_cover: f64,
) -> Result<PatchSet> {
    if !(0.0..=1.0).contains(&min_cover) {
        return Err(Error::InvalidParameter {
            name: "min_canopy_cover",
            message: format!("must lie in [0, 1], got {min_cover}"),
        });
    }
    let mut missing = false;
    set.patches.retain(|p| {
        let Some(values) = p.channels.get(channel) else {
            missing = true;
            return false;
        };
        let mut valid = 0usize;
        let mut covered = 0usize;
        for (&v, &ok) in values.iter().zip(p.valid.iter()) {
            if ok {
                valid += 1;
                if v > height_threshold {
                    covered += 1;
                }
            }
        }
        valid > 0 && covered as f64 / valid as f64 >= min_cover
    });
    if missing {
        return Err(Error::InvalidParameter {
            name: "channel",
            message: format!("channel `{channel}` not present in every patch"),
        });
    }
    Ok(set)
}

/// Reduces the PAD profiles under a patch window to `patch_size / factor`
/// blocks per layer.
///
/// Each patch pixel samples the PAD cell containing its center (nearest
/// when the PAD grid is coarser than the patch grid); block values are the
/// mean over sampled cells with returns, NaN when every sample in the
/// block was empty.
pub fn reduce_pad_profiles(
    pad: &PadGrid,
    patch_grid: &GridSpec,
    row0: usize,
    col0: usize,
    patch_size: usize,
    factor: usize,
) -> Result<PadProfile> {
    if factor == 0 || patch_size % factor != 0 {
        return Err(Error::InvalidParameter {
            name: "pad_factor",
            message: format!("factor {factor} does not divide patch size {patch_size}"),
        });
    }
    pad.grid.check_alignment(patch_grid)?;
    let layers = pad.layers();
    let size = patch_size / factor;
    let mut values = Array3::<f64>::zeros((size, size, layers));

    for br in 0..size {
        for bc in 0..size {
            let mut sums = vec![0.0f64; layers];
            let mut n = 0usize;
            for dr in 0..factor {
                for dc in 0..factor {
                    let row = row0 + br * factor + dr;
                    let col = col0 + bc * factor + dc;
                    if row >= patch_grid.height || col >= patch_grid.width {
                        return Err(Error::OutOfCoverage {
                            x: col as f64,
                            y: row as f64,
                        });
                    }
                    let (cx, cy) = patch_grid.cell_center(row, col);
                    let Some((pr, pc)) = pad.grid.cell_at(cx, cy) else {
                        continue;
                    };
                    if pad.cell_returns[(pr, pc)] == 0 {
                        continue;
                    }
                    n += 1;
                    for (l, s) in sums.iter_mut().enumerate() {
                        *s += pad.pad[(pr, pc, l)];
                    }
                }
            }
            for l in 0..layers {
                values[(br, bc, l)] = if n == 0 { f64::NAN } else { sums[l] / n as f64 };
            }
        }
    }

    Ok(PadProfile {
        layers,
        size,
        factor,
        values,
    })
}

/// Manifest header line.
pub const MANIFEST_HEADER: &str = "tile_id,row0,col0,valid_fraction";

/// Writes the patch manifest CSV and one binary raster per patch channel,
/// named `<tile>_<row0>_<col0>_<band>.f64`. Returns the manifest path.
pub fn write_patchset(set: &PatchSet, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = Vec::new();
    writeln!(manifest, "{MANIFEST_HEADER}")?;
    for patch in &set.patches {
        writeln!(
            manifest,
            "{},{},{},{}",
            patch.tile_id, patch.row0, patch.col0, patch.valid_fraction
        )?;
        let patch_grid = GridSpec::new(
            set.source_grid.origin_x + patch.col0 as f64 * set.source_grid.cell_size,
            set.source_grid.origin_y - patch.row0 as f64 * set.source_grid.cell_size,
            set.source_grid.cell_size,
            set.patch_size,
            set.patch_size,
            set.source_grid.crs_code,
        )?;
        for (band, values) in &patch.channels {
            let mut data = values.clone();
            for (v, &ok) in data.iter_mut().zip(patch.valid.iter()) {
                if !ok {
                    *v = f64::NAN;
                }
            }
            let raster = MetricRaster::from_values(patch_grid.clone(), data, band)?;
            let stem = dir.join(format!(
                "{}_{}_{}_{band}",
                patch.tile_id, patch.row0, patch.col0
            ));
            write_binary_files(&raster, &stem)?;
        }
        if let Some(profile) = &patch.pad_profile {
            let stem = dir.join(format!(
                "{}_{}_{}_pad",
                patch.tile_id, patch.row0, patch.col0
            ));
            write_pad_profile(profile, &stem)?;
        }
    }
    fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

/// Binary layout of a reduced profile: `size*size*layers` little-endian
/// f64 values, layer-contiguous per block, with a text sidecar.
pub fn write_pad_profile(profile: &PadProfile, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let payload_path = stem.with_extension("f64");
    let header_path = stem.with_extension("hdr");
    let mut payload = Vec::with_capacity(profile.values.len() * 8);
    for v in profile.values.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = format!(
        "size: {}\nlayers: {}\nfactor: {}\nkind: pad_profile\n",
        profile.size, profile.layers, profile.factor
    );
    fs::write(&payload_path, payload)?;
    fs::write(&header_path, header)?;
    Ok((payload_path, header_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::PadParams;

    fn grid(w: usize, h: usize, cell: f64) -> GridSpec {
        GridSpec::new(0.0, h as f64 * cell, cell, w, h, 25833).unwrap()
    }

    fn tile(w: usize, h: usize) -> (BTreeMap<String, MetricRaster>, MaskRaster) {
        let g = grid(w, h, 0.2);
        let values = Array2::from_shape_fn((h, w), |(r, c)| (r * w + c) as f64);
        let raster = MetricRaster::from_values(g.clone(), values, "chm").unwrap();
        let mut channels = BTreeMap::new();
        channels.insert("chm".to_string(), raster);
        (channels, MaskRaster::all_valid(g))
    }

    #[test]
    fn exact_tile_gives_one_patch() {
        let (channels, mask) = tile(224, 224);
        let set = extract_patches("t", &channels, &mask, 224, 224).unwrap();
        assert_eq!(set.patches.len(), 1);
        assert_eq!((set.patches[0].row0, set.patches[0].col0), (0, 0));
    }

    #[test]
    fn double_tile_gives_four_disjoint_patches() {
        let (channels, mask) = tile(448, 448);
        let set = extract_patches("t", &channels, &mask, 224, 224).unwrap();
        assert_eq!(set.patches.len(), 4);
        let offsets: Vec<(usize, usize)> =
            set.patches.iter().map(|p| (p.row0, p.col0)).collect();
        assert_eq!(offsets, vec![(0, 0), (0, 224), (224, 0), (224, 224)]);
    }

    #[test]
    fn partial_windows_are_dropped() {
        let (channels, mask) = tile(300, 300);
        let set = extract_patches("t", &channels, &mask, 224, 224).unwrap();
        assert_eq!(set.patches.len(), 1);
    }

    #[test]
    fn patch_pixels_match_tile_pixels() {
        let (channels, mask) = tile(448, 300);
        let set = extract_patches("t", &channels, &mask, 224, 112).unwrap();
        let tile_values = &channels["chm"].values;
        for p in &set.patches {
            let chm = &p.channels["chm"];
            for r in [0, 17, 223] {
                for c in [0, 101, 223] {
                    assert_eq!(chm[(r, c)], tile_values[(p.row0 + r, p.col0 + c)]);
                }
            }
        }
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let (channels, mask) = tile(100, 100);
        assert!(extract_patches("t", &channels, &mask, 224, 224).is_err());
    }

    #[test]
    fn filter_threshold_zero_is_identity_and_boundary_is_inclusive() {
        let g = grid(4, 4, 0.2);
        let mut valid = Array2::from_elem((4, 4), true);
        for c in 0..4 {
            valid[(0, c)] = false;
            valid[(1, c)] = false;
        }
        let mask = MaskRaster::new(g.clone(), valid).unwrap();
        let mut channels = BTreeMap::new();
        channels.insert(
            "chm".to_string(),
            MetricRaster::from_values(g, Array2::zeros((4, 4)), "chm").unwrap(),
        );
        let set = extract_patches("t", &channels, &mask, 4, 4).unwrap();
        assert_eq!(set.patches[0].valid_fraction, 0.5);

        let identity = filter_patches(set.clone(), 0.0).unwrap();
        assert_eq!(identity.patches.len(), 1);
        let boundary = filter_patches(set.clone(), 0.5).unwrap();
        assert_eq!(boundary.patches.len(), 1);
        let above = filter_patches(set, 0.51).unwrap();
        assert_eq!(above.patches.len(), 0);
    }

    fn pad_grid_2x2(values: [Option<[f64; 2]>; 4]) -> PadGrid {
        let g = grid(2, 2, 1.0);
        let mut pad = Array3::zeros((2, 2, 2));
        let mut returns = Array2::zeros((2, 2));
        for (i, cell) in values.iter().enumerate() {
            let (r, c) = (i / 2, i % 2);
            if let Some(profile) = cell {
                returns[(r, c)] = 1u32;
                pad[(r, c, 0)] = profile[0];
                pad[(r, c, 1)] = profile[1];
            }
        }
        PadGrid {
            grid: g,
            pad,
            saturated_mask: Array3::from_elem((2, 2, 2), false),
            params: PadParams {
                max_height: 2.0,
                ..PadParams::default()
            },
            cell_returns: returns,
        }
    }

    #[test]
    fn reduce_factor_one_is_identity() {
        let pad = pad_grid_2x2([
            Some([1.0, 5.0]),
            Some([2.0, 6.0]),
            Some([3.0, 7.0]),
            Some([4.0, 8.0]),
        ]);
        let patch_grid = pad.grid.clone();
        let profile = reduce_pad_profiles(&pad, &patch_grid, 0, 0, 2, 1).unwrap();
        assert_eq!(profile.size, 2);
        assert_eq!(profile.values[(0, 0, 0)], 1.0);
        assert_eq!(profile.values[(1, 1, 1)], 8.0);
    }

    #[test]
    fn reduce_block_mean() {
        let pad = pad_grid_2x2([
            Some([1.0, 0.0]),
            Some([2.0, 0.0]),
            Some([3.0, 0.0]),
            Some([4.0, 0.0]),
        ]);
        let patch_grid = pad.grid.clone();
        let profile = reduce_pad_profiles(&pad, &patch_grid, 0, 0, 2, 2).unwrap();
        assert_eq!(profile.size, 1);
        assert_eq!(profile.values[(0, 0, 0)], 2.5);
    }

    #[test]
    fn reduce_skips_empty_cells() {
        let pad = pad_grid_2x2([Some([1.0, 0.0]), None, Some([3.0, 0.0]), None]);
        let patch_grid = pad.grid.clone();
        let profile = reduce_pad_profiles(&pad, &patch_grid, 0, 0, 2, 2).unwrap();
        assert_eq!(profile.values[(0, 0, 0)], 2.0);

        let empty = pad_grid_2x2([None, None, None, None]);
        let profile = reduce_pad_profiles(&empty, &patch_grid, 0, 0, 2, 2).unwrap();
        assert!(profile.values[(0, 0, 0)].is_nan());
    }

    #[test]
    fn reduce_rejects_non_divisible_factor() {
        let pad = pad_grid_2x2([Some([1.0, 0.0]); 4]);
        let patch_grid = pad.grid.clone();
        assert!(matches!(
            reduce_pad_profiles(&pad, &patch_grid, 0, 0, 2, 3),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn reduce_preserves_global_mean_on_fully_valid_regions() {
        let g = grid(8, 8, 1.0);
        let layers = 3;
        let mut pad = Array3::zeros((8, 8, layers));
        for ((r, c, l), v) in pad.indexed_iter_mut() {
            *v = (r * 31 + c * 7 + l * 3) as f64 * 0.125;
        }
        let grid_struct = PadGrid {
            grid: g.clone(),
            pad,
            saturated_mask: Array3::from_elem((8, 8, layers), false),
            params: PadParams {
                max_height: 3.0,
                ..PadParams::default()
            },
            cell_returns: Array2::from_elem((8, 8), 1),
        };
        let profile = reduce_pad_profiles(&grid_struct, &g, 0, 0, 8, 4).unwrap();
        for l in 0..layers {
            let original: f64 =
                grid_struct.pad.slice(ndarray::s![.., .., l]).mean().unwrap();
            let reduced: f64 = profile.values.slice(ndarray::s![.., .., l]).mean().unwrap();
            assert!((original - reduced).abs() < 1e-12);
        }
    }

    #[test]
    fn patchset_serialization_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (channels, mask) = tile(448, 448);
        let set = extract_patches("tile7", &channels, &mask, 224, 224).unwrap();
        let manifest = write_patchset(&set, dir.path()).unwrap();
        let text = fs::read_to_string(manifest).unwrap();
        assert!(text.starts_with(MANIFEST_HEADER));
        assert_eq!(text.lines().count(), 5);
        let payload = dir.path().join("tile7_0_224_chm.f64");
        assert!(payload.exists());
        let raster = crate::raster::io::read_binary_files(&payload).unwrap();
        assert_eq!(raster.values[(0, 0)], set.patches[1].channels["chm"][(0, 0)]);
    }
}
