//! Seeded two-tissue breast-like phantom, its gradient magnitude image and
//! total variation.

use rand::Rng;
use rand_distr::{Distribution, UnitDisc};

use crate::ct::{GradientMap, ImageGrid};
use crate::linop::LinearMap;
use crate::vecops::{self, norm1};

/// Attenuation of fat tissue, cm^-1.
pub const FAT: f64 = 0.194;
/// Attenuation of fibro-glandular tissue, cm^-1.
pub const FIBRO: f64 = 0.233;

const N_BUMPS: usize = 12;
const FIBRO_QUANTILE: f64 = 0.6;

/// Gray-level display windows in cm^-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisplayWindow {
    /// `[0.174, 0.253]`, showing both tissues.
    Wide,
    /// `[0.174, 0.214]`, stretching contrast around fat.
    Narrow,
}

impl DisplayWindow {
    pub fn range(self) -> (f64, f64) {
        match self {
            DisplayWindow::Wide => (0.174, 0.253),
            DisplayWindow::Narrow => (0.174, 0.214),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "wide" => Some(DisplayWindow::Wide),
            "narrow" => Some(DisplayWindow::Narrow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub grid: ImageGrid,
    pub image: Vec<f64>,
    pub seed: u64,
}

impl Phantom {
    pub fn fat_value(&self) -> f64 {
        FAT
    }

    pub fn fibro_value(&self) -> f64 {
        FIBRO
    }

    /// `max - min` of the image values.
    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = self
            .image
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        hi - lo
    }

    /// Anisotropic total variation `||D f||_1`.
    pub fn tv_value(&self) -> f64 {
        phantom_tv(&self.grid, &self.image)
    }

    pub fn gmi(&self) -> Vec<f64> {
        gmi(&self.grid, &self.image)
    }
}

/// Build the phantom for `grid` from `seed`.
///
/// A fat disk with a gently wobbling outline (radius about 0.87 of the FOV
/// radius) holds fibro-glandular regions where a sum of 12 random Gaussian
/// bumps exceeds its 60th percentile over the breast.
pub fn generate(grid: &ImageGrid, seed: u64) -> Phantom {
    let mut rng = vecops::rng(seed);
    let r_fov = grid.half_side();
    let phases: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let outline = |phi: f64| {
        r_fov
            * (0.87
                + 0.03 * (2.0 * phi + phases[0]).sin()
                + 0.02 * (3.0 * phi + phases[1]).cos()
                + 0.01 * (5.0 * phi + phases[2]).sin())
    };
    let bumps: Vec<([f64; 2], f64, f64)> = (0..N_BUMPS)
        .map(|_| {
            let c: [f64; 2] = UnitDisc.sample(&mut rng);
            let width = r_fov * rng.gen_range(0.12..0.28);
            let amp = rng.gen_range(0.5..1.0);
            ([0.8 * r_fov * c[0], 0.8 * r_fov * c[1]], width, amp)
        })
        .collect();

    let n = grid.n_pixels();
    let mut inside = vec![false; n];
    let mut field = vec![0.0; n];
    for row in 0..grid.ny {
        for col in 0..grid.nx {
            let (x, y) = grid.pixel_center(col, row);
            let k = grid.index(col, row);
            inside[k] = x.hypot(y) < outline(y.atan2(x));
            if inside[k] {
                field[k] = bumps
                    .iter()
                    .map(|(c, w, a)| {
                        let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
                        a * (-0.5 * d2 / (w * w)).exp()
                    })
                    .sum();
            }
        }
    }
    let mut values: Vec<f64> = field
        .iter()
        .zip(&inside)
        .filter(|(_, i)| **i)
        .map(|(f, _)| *f)
        .collect();
    values.sort_by(f64::total_cmp);
    let threshold = values
        .get(((values.len() as f64) * FIBRO_QUANTILE) as usize)
        .copied()
        .unwrap_or(f64::INFINITY);

    let image = (0..n)
        .map(|k| match (inside[k], field[k] > threshold) {
            (false, _) => 0.0,
            (true, false) => FAT,
            (true, true) => FIBRO,
        })
        .collect();
    Phantom {
        grid: *grid,
        image,
        seed,
    }
}

/// Per-pixel `sqrt(dx^2 + dy^2)` of the forward-difference gradient.
pub fn gmi(grid: &ImageGrid, image: &[f64]) -> Vec<f64> {
    let n = grid.n_pixels();
    let d = GradientMap::new(*grid).apply(image).expect("image sized to grid");
    (0..n).map(|k| d[k].hypot(d[n + k])).collect()
}

/// `||D f||_1` with forward differences.
pub fn phantom_tv(grid: &ImageGrid, image: &[f64]) -> f64 {
    norm1(&GradientMap::new(*grid).apply(image).expect("image sized to grid"))
}
