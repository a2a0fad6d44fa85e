use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Meters to millimeters.
pub const MM_PER_M: f64 = 1000.0;

fn check(pred: &Tensor, gt: &Tensor) -> Result<usize> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    if gt.rows() == 0 || gt.cols() == 0 || !gt.cols().is_multiple_of(3) {
        return Err(Error::shape(format!("expected N × 3J positions, got {:?}", gt.shape())));
    }
    Ok(gt.cols() / 3)
}

fn points(row: &[f64]) -> Vec<Vector3<f64>> {
    row.chunks(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect()
}

fn mean_error(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Mean joint-position error in millimeters over frames and joints.
pub fn mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check(pred, gt)?;
    let total: f64 = (0..gt.rows()).map(|t| mean_error(&points(pred.row(t)), &points(gt.row(t)))).sum();
    Ok(total / gt.rows() as f64 * MM_PER_M)
}

/// Similarity transform `s·R·x + t` best mapping `src` onto `dst` in least
/// squares, with `det R = +1`. Scale is 1 when `src` is a single point.
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        h += b * a.transpose();
        var_s += a.norm_squared();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut e = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        e[(2, 2)] = -1.0;
    }
    let r = u * e * v_t;
    let scale = if var_s > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * e).trace() / var_s
    } else {
        1.0
    };
    (scale, r, mu_d - scale * r * mu_s)
}

/// MPJPE after per-frame similarity alignment of `pred` onto `gt`.
pub fn pa_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check(pred, gt)?;
    let mut total = 0.0;
    for t in 0..gt.rows() {
        let (p, g) = (points(pred.row(t)), points(gt.row(t)));
        let (s, r, tr) = procrustes(&p, &g);
        let aligned: Vec<Vector3<f64>> = p.iter().map(|x| s * r * x + tr).collect();
        total += mean_error(&aligned, &g);
    }
    Ok(total / gt.rows() as f64 * MM_PER_M)
}

/// Mean pairwise L2 distance between rows.
pub fn diversity(samples: &Tensor) -> Result<f64> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::invalid(format!("diversity needs at least 2 samples, got {n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += samples.row(i).iter().zip(samples.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}
