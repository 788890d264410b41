//! Byte-level LAS fixture construction and synthetic cloud generators.
//!
//! Built for test suites (enabled in-crate under `cfg(test)` and for
//! dependents via the `test-support` feature). The builder writes headers
//! and point records field by field so parser tests do not depend on the
//! parser itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A point expressed as the raw scaled integers stored on disk.
#[derive(Debug, Clone, Copy)]
pub struct RawLasPoint {
    pub raw_x: i32,
    pub raw_y: i32,
    pub raw_z: i32,
    pub classification: u8,
    pub return_number: u8,
    pub intensity: u16,
}

impl RawLasPoint {
    pub fn new(raw_x: i32, raw_y: i32, raw_z: i32) -> Self {
        RawLasPoint {
            raw_x,
            raw_y,
            raw_z,
            classification: 1,
            return_number: 1,
            intensity: 0,
        }
    }

    pub fn class(mut self, classification: u8) -> Self {
        self.classification = classification;
        self
    }

    pub fn intensity(mut self, intensity: u16) -> Self {
        self.intensity = intensity;
        self
    }
}

/// Declarative LAS blob builder.
#[derive(Debug, Clone)]
pub struct LasFixture {
    pub version_minor: u8,
    pub point_format: u8,
    pub scale: (f64, f64, f64),
    pub offset: (f64, f64, f64),
    pub points: Vec<RawLasPoint>,
}

impl LasFixture {
    pub fn new(
        version_minor: u8,
        point_format: u8,
        scale: (f64, f64, f64),
        offset: (f64, f64, f64),
    ) -> Self {
        LasFixture {
            version_minor,
            point_format,
            scale,
            offset,
            points: Vec::new(),
        }
    }

    fn header_size(&self) -> usize {
        match self.version_minor {
            2 => 227,
            3 => 235,
            _ => 375,
        }
    }

    fn record_length(&self) -> usize {
        match self.point_format {
            0 => 20,
            1 => 28,
            6 => 30,
            7 => 36,
            other => panic!("fixture does not model point format {other}"),
        }
    }

    /// Reconstructed double-precision coordinates, as a reader should see
    /// them.
    pub fn coordinates(&self) -> Vec<(f64, f64, f64)> {
        self.points
            .iter()
            .map(|p| {
                (
                    p.raw_x as f64 * self.scale.0 + self.offset.0,
                    p.raw_y as f64 * self.scale.1 + self.offset.1,
                    p.raw_z as f64 * self.scale.2 + self.offset.2,
                )
            })
            .collect()
    }

    /// Serializes the full LAS blob.
    pub fn build(&self) -> Vec<u8> {
        let header_size = self.header_size();
        let record_len = self.record_length();
        let mut blob = vec![0u8; header_size + self.points.len() * record_len];

        blob[0..4].copy_from_slice(b"LASF");
        blob[24] = 1;
        blob[25] = self.version_minor;
        blob[26..26 + 10].copy_from_slice(b"canopytest");
        blob[94..96].copy_from_slice(&(header_size as u16).to_le_bytes());
        blob[96..100].copy_from_slice(&(header_size as u32).to_le_bytes());
        blob[104] = self.point_format;
        blob[105..107].copy_from_slice(&(record_len as u16).to_le_bytes());
        let n = self.points.len();
        // Legacy count is only valid for formats <= 5; 1.4 carries the
        // extended count.
        if self.point_format <= 5 {
            blob[107..111].copy_from_slice(&(n as u32).to_le_bytes());
        }
        if self.version_minor == 4 {
            blob[247..255].copy_from_slice(&(n as u64).to_le_bytes());
        }

        for (axis, (s, o)) in [
            (self.scale.0, self.offset.0),
            (self.scale.1, self.offset.1),
            (self.scale.2, self.offset.2),
        ]
        .into_iter()
        .enumerate()
        {
            blob[131 + axis * 8..139 + axis * 8].copy_from_slice(&s.to_le_bytes());
            blob[155 + axis * 8..163 + axis * 8].copy_from_slice(&o.to_le_bytes());
        }

        let coords = self.coordinates();
        let fold = |pick: fn(&(f64, f64, f64)) -> f64, init: f64, min: bool| -> f64 {
            coords.iter().map(pick).fold(init, |acc, v| {
                if min {
                    acc.min(v)
                } else {
                    acc.max(v)
                }
            })
        };
        let bounds = if coords.is_empty() {
            [0.0; 6]
        } else {
            [
                fold(|c| c.0, f64::INFINITY, true),
                fold(|c| c.0, f64::NEG_INFINITY, false),
                fold(|c| c.1, f64::INFINITY, true),
                fold(|c| c.1, f64::NEG_INFINITY, false),
                fold(|c| c.2, f64::INFINITY, true),
                fold(|c| c.2, f64::NEG_INFINITY, false),
            ]
        };
        // Header order: max_x, min_x, max_y, min_y, max_z, min_z.
        for (i, value) in [
            bounds[1], bounds[0], bounds[3], bounds[2], bounds[5], bounds[4],
        ]
        .into_iter()
        .enumerate()
        {
            blob[179 + i * 8..187 + i * 8].copy_from_slice(&value.to_le_bytes());
        }

        for (i, p) in self.points.iter().enumerate() {
            let base = header_size + i * record_len;
            blob[base..base + 4].copy_from_slice(&p.raw_x.to_le_bytes());
            blob[base + 4..base + 8].copy_from_slice(&p.raw_y.to_le_bytes());
            blob[base + 8..base + 12].copy_from_slice(&p.raw_z.to_le_bytes());
            blob[base + 12..base + 14].copy_from_slice(&p.intensity.to_le_bytes());
            match self.point_format {
                0 | 1 => {
                    blob[base + 14] = (p.return_number & 0x07) | (1 << 3);
                    blob[base + 15] = p.classification & 0x1f;
                }
                _ => {
                    blob[base + 14] = (p.return_number & 0x0f) | (1 << 4);
                    blob[base + 16] = p.classification;
                }
            }
        }
        blob
    }
}

/// Deterministic synthetic forest scene over `extent_m` x `extent_m`
/// meters: a gently rolling terrain sampled by ground returns (class 2)
/// mixed with vegetation returns up to ~35 m above the terrain.
///
/// Roughly one third of returns are ground. Coordinates are quantized to
/// centimeters (scale 0.01).
pub fn synthetic_forest_fixture(n_points: usize, extent_m: f64, seed: u64) -> LasFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain = |x: f64, y: f64| -> f64 {
        300.0 + 8.0 * (x * 0.004).sin() + 6.0 * (y * 0.006).cos() + 0.01 * x
    };
    let to_raw = |v: f64| -> i32 { (v * 100.0).round() as i32 };
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x = rng.gen_range(0.0..extent_m);
        let y = rng.gen_range(0.0..extent_m);
        let ground_z = terrain(x, y);
        let (z, class) = if rng.gen_bool(1.0 / 3.0) {
            (ground_z, 2u8)
        } else {
            let canopy = 2.0 + 33.0 * rng.gen::<f64>().powi(2);
            (ground_z + canopy, 1u8)
        };
        points.push(
            RawLasPoint::new(to_raw(x), to_raw(y), to_raw(z))
                .class(class)
                .intensity(rng.gen_range(0..4096)),
        );
    }
    LasFixture {
        points,
        ..LasFixture::new(2, 0, (0.01, 0.01, 0.01), (0.0, 0.0, 0.0))
    }
}
