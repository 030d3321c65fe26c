use ndarray::Array2;

use crate::io::table::Localization;

/// Fraction of the frame maximum a pixel must exceed to count.
pub const EXTRACT_FRACTION: f32 = 0.3;

/// Turns a generated map into localizations.
///
/// A pixel is kept when it exceeds `0.3·max(map)` and is an 8-neighbourhood
/// maximum. On plateaus only the first pixel in raster order survives
/// (ties with earlier neighbours lose, ties with later ones win).
/// Coordinates are pixel centres, `(index + 0.5)·pixel_nm/factor`.
pub fn extract_table(map: &Array2<f32>, factor: usize, pixel_nm: f64, frame: usize) -> Vec<Localization> {
    let max = map.iter().copied().fold(0.0f32, f32::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let threshold = EXTRACT_FRACTION * max;
    let (h, w) = map.dim();
    let px = pixel_nm / factor as f64;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = map[[r, c]];
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let n = map[[rr as usize, cc as usize]];
                    let earlier = dr < 0 || (dr == 0 && dc < 0);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push(Localization {
                    intensity: Some(v as f64),
                    ..Localization::at(frame, (c as f64 + 0.5) * px, (r as f64 + 0.5) * px)
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_map_is_empty() {
        assert!(extract_table(&Array2::zeros((8, 8)), 5, 100.0, 0).is_empty());
    }

    #[test]
    fn single_pixel_coordinates() {
        let mut m = Array2::zeros((20, 20));
        m[[7, 10]] = 1.0;
        let t = extract_table(&m, 5, 100.0, 3);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].x_nm, t[0].y_nm, t[0].frame), (210.0, 150.0, 3));
        assert_eq!(t[0].intensity, Some(1.0));
    }

    #[test]
    fn weak_pixels_below_threshold_drop() {
        let mut m = Array2::zeros((20, 20));
        m[[2, 2]] = 1.0;
        m[[10, 10]] = 0.2;
        let t = extract_table(&m, 5, 100.0, 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].intensity, Some(1.0));
    }

    #[test]
    fn plateau_yields_one_detection() {
        let mut m = Array2::zeros((10, 10));
        m.slice_mut(ndarray::s![3..6, 4..7]).fill(1.0);
        let t = extract_table(&m, 1, 10.0, 0);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].x_nm, t[0].y_nm), (45.0, 35.0));
    }

    proptest! {
        #[test]
        fn detections_are_bounded_maxima(vals in proptest::collection::vec(0.0f32..1.0, 144)) {
            let m = Array2::from_shape_vec((12, 12), vals).unwrap();
            let t = extract_table(&m, 2, 100.0, 0);
            let maxima = (0..12).flat_map(|r| (0..12).map(move |c| (r, c))).filter(|&(r, c)| {
                let v = m[[r, c]];
                (r.saturating_sub(1)..=(r + 1).min(11)).all(|rr| (c.saturating_sub(1)..=(c + 1).min(11)).all(|cc| m[[rr, cc]] <= v))
            }).count();
            prop_assert!(t.len() <= maxima);
            for l in &t {
                prop_assert!(l.x_nm > 0.0 && l.x_nm < 600.0 && l.y_nm > 0.0 && l.y_nm < 600.0);
            }
        }
    }
}
