//! Colour deconvolution into hematoxylin and eosin concentrations.

use image::{DynamicImage, Rgb, RgbImage};

use super::ObjectiveError;

pub const RUIFROK_HEMATOXYLIN: [f64; 3] = [0.650, 0.704, 0.286];
pub const RUIFROK_EOSIN: [f64; 3] = [0.072, 0.990, 0.105];

/// Unit stain vectors as rows (H, E, residual) and the inverse used for unmixing.
#[derive(Debug, Clone, PartialEq)]
pub struct StainMatrix {
    pub rows: [[f64; 3]; 3],
    inverse: [[f64; 3]; 3],
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl StainMatrix {
    pub fn new(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Self {
        let h = unit(hematoxylin);
        let e = unit(eosin);
        let r = unit(cross(h, e));
        let rows = [h, e, r];
        let m = nalgebra::Matrix3::from_row_slice(&[h[0], h[1], h[2], e[0], e[1], e[2], r[0], r[1], r[2]]);
        let inv = m
            .try_inverse()
            .expect("H and E stain vectors must be linearly independent");
        let mut inverse = [[0.0; 3]; 3];
        for (i, row) in inverse.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = inv[(i, j)];
            }
        }
        Self { rows, inverse }
    }

    pub fn ruifrok() -> Self {
        Self::new(RUIFROK_HEMATOXYLIN, RUIFROK_EOSIN)
    }

    /// Concentrations `c` solving `od = c · M`, clamped at zero.
    pub fn unmix(&self, od: [f64; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = (0..3).map(|k| od[k] * self.inverse[k][j]).sum::<f64>().max(0.0);
        }
        c
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::ruifrok()
    }
}

pub(crate) fn optical_density(p: u8) -> f64 {
    -((p as f64 + 1.0) / 256.0).log10()
}

fn od_table() -> [f64; 256] {
    let mut t = [0.0; 256];
    for (i, v) in t.iter_mut().enumerate() {
        *v = optical_density(i as u8);
    }
    t
}

/// A single-channel float image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl ConcentrationMap {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Average-pool into a `cells × cells` grid, flattened row-major.
    pub fn pooled(&self, cells: u32) -> Vec<f64> {
        let mut sums = vec![0.0; (cells * cells) as usize];
        let mut counts = vec![0usize; (cells * cells) as usize];
        for y in 0..self.height {
            let cy = (y * cells / self.height.max(1)).min(cells - 1);
            for x in 0..self.width {
                let cx = (x * cells / self.width.max(1)).min(cells - 1);
                let k = (cy * cells + cx) as usize;
                sums[k] += self.get(x, y) as f64;
                counts[k] += 1;
            }
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

/// Input and target for the stain-prediction pretext task: the eosin channel
/// is the input and the hematoxylin channel is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct StainPretextPair {
    pub input: ConcentrationMap,
    pub target: ConcentrationMap,
}

impl StainPretextPair {
    pub fn from_rgb(img: &RgbImage, m: &StainMatrix) -> Self {
        let (h, e) = stain_separate_rgb(img, m);
        Self { input: e, target: h }
    }
}

/// Hematoxylin and eosin concentration maps of an 8-bit RGB image.
pub fn stain_separate(img: &DynamicImage) -> Result<(ConcentrationMap, ConcentrationMap), ObjectiveError> {
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(stain_separate_rgb(rgb, &StainMatrix::ruifrok())),
        other => Err(ObjectiveError::NotRgb(format!("{:?}", other.color()))),
    }
}

pub fn stain_separate_rgb(img: &RgbImage, m: &StainMatrix) -> (ConcentrationMap, ConcentrationMap) {
    let lut = od_table();
    let n = (img.width() * img.height()) as usize;
    let mut h = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    for px in img.pixels() {
        let c = m.unmix([lut[px[0] as usize], lut[px[1] as usize], lut[px[2] as usize]]);
        h.push(c[0] as f32);
        e.push(c[1] as f32);
    }
    let map = |data| ConcentrationMap {
        width: img.width(),
        height: img.height(),
        data,
    };
    (map(h), map(e))
}

/// Re-render one concentration channel as RGB through a single stain vector.
pub fn render_single_stain(conc: &ConcentrationMap, stain: [f64; 3]) -> RgbImage {
    let s = unit(stain);
    RgbImage::from_fn(conc.width, conc.height, |x, y| {
        let c = conc.get(x, y) as f64;
        let ch = |k: usize| (256.0 * 10f64.powf(-c * s[k]) - 1.0).round().clamp(0.0, 255.0) as u8;
        Rgb([ch(0), ch(1), ch(2)])
    })
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64, ObjectiveError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ObjectiveError::Shape(format!(
            "mse over {} and {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel_for(stain: [f64; 3], k: f64) -> [u8; 3] {
        let s = unit(stain);
        let ch = |i: usize| (256.0 * 10f64.powf(-k * s[i]) - 1.0).round() as u8;
        [ch(0), ch(1), ch(2)]
    }

    #[test]
    fn white_pixel_has_zero_concentration() {
        let img = RgbImage::from_pixel(3, 2, Rgb([255, 255, 255]));
        let (h, e) = stain_separate_rgb(&img, &StainMatrix::ruifrok());
        assert!(h.data.iter().chain(&e.data).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn pure_stain_pixels_separate() {
        let m = StainMatrix::ruifrok();
        let img = RgbImage::from_fn(2, 1, |x, _| {
            Rgb(if x == 0 {
                pixel_for(RUIFROK_HEMATOXYLIN, 1.0)
            } else {
                pixel_for(RUIFROK_EOSIN, 0.5)
            })
        });
        let (h, e) = stain_separate_rgb(&img, &m);
        assert!((h.get(0, 0) - 1.0).abs() < 0.02, "{}", h.get(0, 0));
        assert!(e.get(0, 0).abs() < 0.02);
        assert!((e.get(1, 0) - 0.5).abs() < 0.02, "{}", e.get(1, 0));
        assert!(h.get(1, 0).abs() < 0.02);
    }

    #[test]
    fn inverse_is_exact() {
        let m = StainMatrix::ruifrok();
        for (i, row) in m.rows.iter().enumerate() {
            let c = m.unmix(*row);
            for (j, v) in c.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concentrations_are_non_negative_for_every_colour() {
        let m = StainMatrix::ruifrok();
        let lut = od_table();
        for r in (0..256).step_by(15) {
            for g in (0..256).step_by(15) {
                for b in (0..256).step_by(15) {
                    let c = m.unmix([lut[r], lut[g], lut[b]]);
                    assert!(c.iter().all(|v| *v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn non_rgb_input_is_rejected() {
        let gray = DynamicImage::new_luma8(4, 4);
        assert!(matches!(stain_separate(&gray), Err(ObjectiveError::NotRgb(_))));
        assert!(stain_separate(&DynamicImage::new_rgb8(4, 4)).is_ok());
    }

    #[test]
    fn render_round_trips_concentration() {
        let conc = ConcentrationMap {
            width: 2,
            height: 1,
            data: vec![0.0, 0.8],
        };
        let img = render_single_stain(&conc, RUIFROK_EOSIN);
        let (_, e) = stain_separate_rgb(&img, &StainMatrix::ruifrok());
        assert!(e.get(0, 0).abs() < 1e-6);
        assert!((e.get(1, 0) - 0.8).abs() < 0.03);
    }

    #[test]
    fn pooling_and_mse() {
        let conc = ConcentrationMap {
            width: 4,
            height: 4,
            data: (0..16).map(|i| i as f32).collect(),
        };
        let p = conc.pooled(2);
        assert_eq!(p, vec![2.5, 4.5, 10.5, 12.5]);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
        assert!(mse(&[], &[]).is_err());
    }
}
