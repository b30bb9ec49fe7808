use crate::geometry::BoundingBox;
use crate::raster::{clamp_taps, Raster};

use super::ProfileKind;

/// Bilinear taps for `n` output samples spread evenly over `[lo, lo + len)`.
pub(crate) fn axis_taps(lo: f64, len: f64, n: usize, size: usize) -> Vec<(usize, usize, f32)> {
    let step = len / n as f64;
    (0..n)
        .map(|u| {
            let (i0, i1, f) = clamp_taps(lo + (u as f64 + 0.5) * step - 0.5, size);
            (i0, i1, f as f32)
        })
        .collect()
}

/// Resamples the part of `frame` under `b` to `out_w x out_h`. Each output
/// pixel takes the bilinear value at its center mapped into the box; samples
/// falling outside the image clamp to the border.
pub fn crop_resize(frame: &Raster, b: &BoundingBox, out_w: usize, out_h: usize) -> Raster {
    let xs = axis_taps(b.left(), b.w, out_w, frame.width());
    let ys = axis_taps(b.top(), b.h, out_h, frame.height());
    let ch = frame.channels();
    let mut out = Vec::with_capacity(out_w * out_h * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let a = frame.get(x0, y0, c);
                let b_ = frame.get(x1, y0, c);
                let d = frame.get(x0, y1, c);
                let e = frame.get(x1, y1, c);
                let top = a + (b_ - a) * fx;
                let bot = d + (e - d) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Raster::from_vec(out_w, out_h, ch, out).expect("sizes agree by construction")
}

/// Mean squared difference between `template` (single channel, `w x h`) and
/// the single-channel `frame` resampled under `b`. Same sampling as
/// [`crop_resize`] without materializing the crop.
pub(crate) fn resampled_mse(frame: &Raster, b: &BoundingBox, template: &Raster) -> f64 {
    let (w, h) = (template.width(), template.height());
    let xs = axis_taps(b.left(), b.w, w, frame.width());
    let ys = axis_taps(b.top(), b.h, h, frame.height());
    let src = frame.data();
    let stride = frame.width();
    let tpl = template.data();
    let mut row = vec![0.0f32; w];
    let mut total = 0.0f64;
    for (v, &(y0, y1, fy)) in ys.iter().enumerate() {
        let r0 = &src[y0 * stride..(y0 + 1) * stride];
        let r1 = &src[y1 * stride..(y1 + 1) * stride];
        for (slot, &(x0, x1, fx)) in row.iter_mut().zip(&xs) {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            *slot = top + (bot - top) * fy;
        }
        let t = &tpl[v * w..(v + 1) * w];
        let mut acc = 0.0f32;
        for (a, b) in row.iter().zip(t) {
            let d = a - b;
            acc += d * d;
        }
        total += acc as f64;
    }
    total / (w * h) as f64
}

/// Scores every integer center offset in `[-c, c]^2` and returns the best
/// `(score, dx, dy)`. Ties keep the lexicographically smallest `(dx, dy)`.
pub fn center_shift_search(
    mut score_fn: impl FnMut(&BoundingBox) -> f64,
    b: &BoundingBox,
    c: u32,
    kind: ProfileKind,
) -> (f64, i32, i32) {
    let c = c as i32;
    let mut best: Option<(f64, i32, i32)> = None;
    for dx in -c..=c {
        for dy in -c..=c {
            let s = score_fn(&b.shifted(dx as f64, dy as f64));
            if best.map_or(true, |(bs, _, _)| kind.better(s, bs)) {
                best = Some((s, dx, dy));
            }
        }
    }
    best.expect("at least one offset")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_texture;

    #[test]
    fn full_crop_is_identity() {
        let img = random_texture(3, 23, 17);
        let b = BoundingBox::new(11.5, 8.5, 23.0, 17.0).unwrap();
        let out = crop_resize(&img, &b, 23, 17);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn checkerboard_upsample() {
        let img = Raster::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let b = BoundingBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
        let out = crop_resize(&img, &b, 4, 4);
        // output centers land at pixel-index coordinates -0.25, 0.25, 0.75, 1.25
        let expect = [
            [0.0, 0.25, 0.75, 1.0],
            [0.25, 0.375, 0.625, 0.75],
            [0.75, 0.625, 0.375, 0.25],
            [1.0, 0.75, 0.25, 0.0],
        ];
        for v in 0..4 {
            for u in 0..4 {
                assert!((out.get(u, v, 0) - expect[v][u]).abs() < 1e-6, "({u},{v})");
            }
        }
        // the four samples around the image midpoint average to 0.5
        let mid: f32 = [(1, 1), (2, 1), (1, 2), (2, 2)].iter().map(|&(u, v)| out.get(u, v, 0)).sum::<f32>() / 4.0;
        assert!((mid - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gray_stays_gray() {
        let img = Raster::filled(30, 20, 3, 0.42);
        for b in [
            BoundingBox::new(15.0, 10.0, 7.3, 4.1).unwrap(),
            BoundingBox::new(28.0, 1.0, 30.0, 30.0).unwrap(),
        ] {
            let out = crop_resize(&img, &b, 9, 5);
            assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        }
    }

    #[test]
    fn mse_matches_materialized_crop() {
        let img = random_texture(8, 60, 40).to_gray();
        let b = BoundingBox::new(30.3, 19.7, 21.4, 15.2).unwrap();
        let tpl = random_texture(9, 12, 9).to_gray();
        let crop = crop_resize(&img, &b, 12, 9);
        let oracle: f64 = crop.data().iter().zip(tpl.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
            / 108.0;
        assert!((resampled_mse(&img, &b, &tpl) - oracle).abs() < 1e-6);
    }

    #[test]
    fn shift_search_finds_offset() {
        let img = random_texture(4, 80, 80).to_gray();
        let truth = BoundingBox::new(42.0, 40.0, 20.0, 20.0).unwrap();
        let tpl = crop_resize(&img, &truth, 20, 20);
        let start = BoundingBox::new(40.0, 40.0, 20.0, 20.0).unwrap();
        let score = |b: &BoundingBox| resampled_mse(&img, b, &tpl);
        let (s, dx, dy) = center_shift_search(score, &start, 3, ProfileKind::Mse);
        assert_eq!((dx, dy), (2, 0));
        assert!(s < 1e-12);

        // brute force over all 49 offsets agrees
        let mut best = (f64::INFINITY, 0, 0);
        for dx in -3..=3 {
            for dy in -3..=3 {
                let v = score(&start.shifted(dx as f64, dy as f64));
                if v < best.0 {
                    best = (v, dx, dy);
                }
            }
        }
        assert_eq!((best.1, best.2), (dx, dy));

        let (s0, dx0, dy0) = center_shift_search(score, &start, 0, ProfileKind::Mse);
        assert_eq!((dx0, dy0), (0, 0));
        assert_eq!(s0, score(&start));
        let (s1, _, _) = center_shift_search(score, &start, 1, ProfileKind::Mse);
        assert!(s <= s1 && s1 <= s0);
    }

    #[test]
    fn shift_search_ties_are_lexicographic() {
        let b = BoundingBox::new(10.0, 10.0, 4.0, 4.0).unwrap();
        let (_, dx, dy) = center_shift_search(|_| 1.0, &b, 2, ProfileKind::Logit);
        assert_eq!((dx, dy), (-2, -2));
    }
}
