use ndarray::Array2;

use crate::io::stack::FrameStack;
use crate::io::table::LocalizationTable;
use crate::localize::gaussian_blur;

/// Bin counts needed to cover every localization.
pub fn extent_bins(table: &LocalizationTable, render_px_nm: f64) -> (usize, usize) {
    let max_x = table.rows.iter().map(|r| r.x_nm).fold(0.0, f64::max);
    let max_y = table.rows.iter().map(|r| r.y_nm).fold(0.0, f64::max);
    ((max_y / render_px_nm).floor() as usize + 1, (max_x / render_px_nm).floor() as usize + 1)
}

/// 2-D histogram of localizations on a `render_px_nm` grid with origin at
/// (0, 0), optionally blurred. `shape` is `(rows, cols)`; by default it
/// covers all localizations. Points outside the grid are dropped.
pub fn render(
    table: &LocalizationTable,
    render_px_nm: f64,
    blur_sigma_nm: Option<f64>,
    shape: Option<(usize, usize)>,
) -> Array2<f64> {
    let (h, w) = shape.unwrap_or_else(|| extent_bins(table, render_px_nm));
    let mut img = Array2::zeros((h, w));
    for r in &table.rows {
        let (cx, cy) = ((r.x_nm / render_px_nm).floor(), (r.y_nm / render_px_nm).floor());
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < w && (cy as usize) < h {
            img[[cy as usize, cx as usize]] += 1.0;
        }
    }
    match blur_sigma_nm {
        Some(s) if s > 0.0 => gaussian_blur(&img.view(), s / render_px_nm),
        _ => img,
    }
}

/// Widefield-equivalent image: the sum over all frames.
pub fn widefield(stack: &FrameStack) -> Array2<f64> {
    let mut img = Array2::zeros((stack.height, stack.width));
    for frame in stack.frames() {
        for (v, &p) in img.iter_mut().zip(frame) {
            *v += p as f64;
        }
    }
    img
}
