//! Pure image transforms and the fixed preprocessing pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pixels::PixelGrid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionKind {
    #[default]
    None,
    UpperHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OcclusionMode {
    pub kind: OcclusionKind,
    /// Ignored when `kind` is `None`.
    pub fill: u8,
}

impl OcclusionMode {
    pub const NONE: OcclusionMode = OcclusionMode {
        kind: OcclusionKind::None,
        fill: 0,
    };

    pub const fn upper_half(fill: u8) -> Self {
        Self {
            kind: OcclusionKind::UpperHalf,
            fill,
        }
    }

    pub fn is_occluded(&self) -> bool {
        self.kind == OcclusionKind::UpperHalf
    }
}

/// Sets rows `[0, floor(h/2))` to `fill` in every channel.
pub fn occlude_upper_half(image: &PixelGrid, fill: u8) -> PixelGrid {
    let mut out = image.clone();
    for row in 0..image.height() / 2 {
        out.row_mut(row).fill(fill);
    }
    out
}

pub fn hflip(image: &PixelGrid) -> PixelGrid {
    let (w, c) = (image.width(), image.channels());
    let mut out = image.clone();
    for row in 0..image.height() {
        let src = image.row(row);
        let dst = out.row_mut(row);
        for col in 0..w {
            let m = w - 1 - col;
            dst[col * c..(col + 1) * c].copy_from_slice(&src[m * c..(m + 1) * c]);
        }
    }
    out
}

/// Replicates a single channel into three; three-channel input is returned
/// unchanged.
pub fn gray_to_rgb(image: &PixelGrid) -> PixelGrid {
    if image.channels() == 3 {
        return image.clone();
    }
    let data = image.data().iter().flat_map(|&v| [v, v, v]).collect();
    PixelGrid::new(image.height(), image.width(), 3, data).expect("same geometry")
}

/// Source coordinate and blend weight for bilinear sampling with
/// half-pixel centres, clamped at the borders.
pub(crate) fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
        .clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize to `[channels, target_h, target_w]` without rounding.
pub fn resize_to_planes(image: &PixelGrid, target_h: usize, target_w: usize) -> Tensor {
    assert!(
        target_h >= 1 && target_w >= 1,
        "target size must be positive"
    );
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let cols: Vec<_> = (0..target_w).map(|x| sample_axis(x, w, target_w)).collect();
    let mut out = Tensor::zeros(&[c, target_h, target_w]);
    let data = out.data_mut();
    for y in 0..target_h {
        let (y0, y1, fy) = sample_axis(y, h, target_h);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let p = |r, col| image.get(r, col, ch) as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                data[(ch * target_h + y) * target_w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Bilinear resize, rounded back to 8 bits.
pub fn resize(image: &PixelGrid, target_h: usize, target_w: usize) -> PixelGrid {
    let planes = resize_to_planes(image, target_h, target_w);
    let c = image.channels();
    let mut data = vec![0u8; target_h * target_w * c];
    for ch in 0..c {
        for i in 0..target_h * target_w {
            data[i * c + ch] = planes.data()[ch * target_h * target_w + i]
                .round()
                .clamp(0.0, 255.0) as u8;
        }
    }
    PixelGrid::new(target_h, target_w, c, data).expect("positive target size")
}

fn flip_planes(t: &mut Tensor) {
    let w = t.shape()[2];
    for row in t.data_mut().chunks_mut(w) {
        row.reverse();
    }
}

/// The fixed preprocessing chain: grayscale expansion, optional upper-half
/// occlusion at native resolution, bilinear resize, and (training only)
/// a random horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub occlusion: OcclusionMode,
    pub flip_augment: bool,
    pub target_size: usize,
}

pub fn build_pipeline(
    occlusion: OcclusionMode,
    flip_augment: bool,
    target_size: usize,
) -> Pipeline {
    Pipeline {
        occlusion,
        flip_augment,
        target_size,
    }
}

impl Pipeline {
    /// Deterministic path used for validation and testing; never flips.
    pub fn apply_eval(&self, image: &PixelGrid) -> Tensor {
        let rgb = gray_to_rgb(image);
        let staged = if self.occlusion.is_occluded() {
            occlude_upper_half(&rgb, self.occlusion.fill)
        } else {
            rgb
        };
        resize_to_planes(&staged, self.target_size, self.target_size)
    }

    /// Training path: flips with probability 0.5 when augmentation is on.
    pub fn apply_train<R: Rng + ?Sized>(&self, image: &PixelGrid, rng: &mut R) -> Tensor {
        let mut t = self.apply_eval(image);
        if self.flip_augment && rng.random_bool(0.5) {
            flip_planes(&mut t);
        }
        t
    }

    /// Applies a flip decision made elsewhere to an already prepared tensor.
    pub fn flip_prepared(t: &Tensor) -> Tensor {
        let mut t = t.clone();
        flip_planes(&mut t);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn grid(h: usize, w: usize, c: usize, seed: u8) -> PixelGrid {
        let data = (0..h * w * c)
            .map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed))
            .collect();
        PixelGrid::new(h, w, c, data).unwrap()
    }

    #[test]
    fn occlusion_48() {
        let g = grid(48, 48, 1, 5);
        let o = occlude_upper_half(&g, 0);
        for r in 0..24 {
            assert!(o.row(r).iter().all(|&v| v == 0));
        }
        for r in 24..48 {
            assert_eq!(o.row(r), g.row(r));
        }
    }

    #[test]
    fn occlusion_odd_height() {
        let g = grid(5, 3, 3, 1);
        let o = occlude_upper_half(&g, 9);
        assert!(o.row(0).iter().chain(o.row(1)).all(|&v| v == 9));
        for r in 2..5 {
            assert_eq!(o.row(r), g.row(r));
        }
    }

    #[test]
    fn hflip_fixture() {
        let g = PixelGrid::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(
            hflip(&g),
            PixelGrid::from_rows(&[vec![2, 1], vec![4, 3]]).unwrap()
        );
        let narrow = grid(4, 1, 3, 0);
        assert_eq!(hflip(&narrow), narrow);
    }

    #[test]
    fn gray_expansion() {
        let g = PixelGrid::filled(48, 48, 1, 17).unwrap();
        let rgb = gray_to_rgb(&g);
        assert_eq!(rgb.channels(), 3);
        assert_eq!(
            (rgb.get(3, 4, 0), rgb.get(3, 4, 1), rgb.get(3, 4, 2)),
            (17, 17, 17)
        );
        let c = grid(4, 4, 3, 2);
        assert_eq!(gray_to_rgb(&c), c);
    }

    #[test]
    fn resize_shape_and_constants() {
        let g = grid(48, 48, 1, 0);
        let r = resize(&g, 224, 224);
        assert_eq!((r.height(), r.width(), r.channels()), (224, 224, 1));
        let k = PixelGrid::filled(7, 5, 3, 123).unwrap();
        for (th, tw) in [(2, 1), (3, 11), (224, 224)] {
            let r = resize(&k, th, tw);
            assert!(r.data().iter().all(|&v| v == 123));
        }
    }

    #[test]
    fn checkerboard_upscale_interior_is_blended() {
        let g = PixelGrid::from_rows(&[vec![0, 255], vec![255, 0]]).unwrap();
        let r = resize_to_planes(&g, 4, 4);
        for y in 1..3 {
            for x in 1..3 {
                let v = r.data()[y * 4 + x];
                assert!(v > 0.0 && v < 255.0, "({y},{x}) = {v}");
            }
        }
        // Hand evaluation: (1,1) samples source (0.25, 0.25).
        let expected = 255.0 * (0.75 * 0.25) * 2.0;
        assert!((r.data()[5] - expected).abs() < 1e-12);
    }

    #[test]
    fn pipeline_is_deterministic_under_seed() {
        let p = build_pipeline(OcclusionMode::NONE, true, 16);
        let imgs: Vec<_> = (0..20).map(|i| grid(10, 10, 1, i)).collect();
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
            imgs.iter()
                .map(|g| p.apply_train(g, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn flip_involution_and_commutes_with_occlusion(h in 2usize..12, w in 1usize..12, three in any::<bool>(), seed in any::<u8>(), fill in any::<u8>()) {
            let g = grid(h, w, if three { 3 } else { 1 }, seed);
            prop_assert_eq!(hflip(&hflip(&g)), g.clone());
            prop_assert_eq!(hflip(&occlude_upper_half(&g, fill)), occlude_upper_half(&hflip(&g), fill));
            let once = occlude_upper_half(&g, fill);
            prop_assert_eq!(occlude_upper_half(&once, fill), once);
        }
    }
}
