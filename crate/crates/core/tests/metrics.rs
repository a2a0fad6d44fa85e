use exges_core::metrics::*;
use exges_core::numcore::Tensor;
use exges_core::retrieval::{RetrievalConfig, RetrievalModel};
use exges_core::rng;
use nalgebra::{DMatrix, Rotation3, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn gaussian(r: &mut rng::Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

#[test]
fn fgd_diagonal_closed_form() {
    let mut r = rng::seeded(1);
    for _ in 0..10 {
        let d = r.random_range(1..12);
        let (m1, m2): (Vec<f64>, Vec<f64>) = (0..d).map(|_| (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0))).unzip();
        let (v1, v2): (Vec<f64>, Vec<f64>) = (0..d).map(|_| (r.random_range(0.01..4.0), r.random_range(0.01..4.0))).unzip();
        let a = FeatureDistribution::from_moments(m1.clone(), DMatrix::from_diagonal(&v1.clone().into())).unwrap();
        let b = FeatureDistribution::from_moments(m2.clone(), DMatrix::from_diagonal(&v2.clone().into())).unwrap();
        let oracle: f64 = (0..d).map(|i| (m1[i] - m2[i]).powi(2) + (v1[i].sqrt() - v2[i].sqrt()).powi(2)).sum();
        assert!((frechet_distance(&a, &b).unwrap() - oracle).abs() < 1e-6);
    }
}

#[test]
fn fgd_scaled_covariance_closed_form() {
    // Σ₂ = c²Σ₁ gives (1−c)²·Tr Σ₁.
    let mut r = rng::seeded(2);
    let x = gaussian(&mut r, 8, 5);
    let m = DMatrix::from_row_slice(8, 5, x.data());
    let cov = m.transpose() * m / 7.0;
    let c = 1.7;
    let a = FeatureDistribution::from_moments(vec![0.0; 5], cov.clone()).unwrap();
    let b = FeatureDistribution::from_moments(vec![0.0; 5], &cov * (c * c)).unwrap();
    assert!((frechet_distance(&a, &b).unwrap() - (1.0 - c) * (1.0 - c) * cov.trace()).abs() < 1e-9);
}

#[test]
fn fgd_self_and_symmetry() {
    let mut r = rng::seeded(3);
    let x = gaussian(&mut r, 200, 12);
    let y = gaussian(&mut r, 150, 12).map(|v| 0.5 * v + 0.3);
    assert!(fgd(&x, &x).unwrap().abs() < 1e-8);
    let (xy, yx) = (fgd(&x, &y).unwrap(), fgd(&y, &x).unwrap());
    assert!((xy - yx).abs() < 1e-8 && xy > 0.0);
    assert!(fgd(&x.slice_rows(0, 1), &x).is_err());
    assert!(fgd(&x, &gaussian(&mut r, 10, 3)).is_err());
}

#[test]
fn fgd_univariate_gaussians() {
    let mut r = rng::seeded(4);
    let n = 100_000;
    let a = Tensor::matrix(n, 1, (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap();
    let shifted = Normal::new(1.0, 1.0).unwrap();
    let b = Tensor::matrix(n, 1, (0..n).map(|_| shifted.sample(&mut r)).collect()).unwrap();
    assert!((fgd(&a, &b).unwrap() - 1.0).abs() < 0.05);
}

#[test]
fn non_psd_moments_rejected() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(FeatureDistribution::from_moments(vec![0.0; 2], cov).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    assert!(FeatureDistribution::from_moments(vec![0.0; 2], asym).is_err());
}

#[test]
fn raw_stats_features() {
    let constant = Tensor::filled(&[10, 4], 2.5);
    let f = extract_features(&[&constant, &constant], FeatureExtractor::RawStats).unwrap();
    assert_eq!(f.shape(), &[2, 12]);
    assert_eq!(&f.row(0)[..4], &[2.5; 4]);
    assert_eq!(&f.row(0)[4..], &[0.0; 8]);
    let ramp = Tensor::matrix(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let f = extract_features(&[&ramp], FeatureExtractor::RawStats).unwrap();
    assert_eq!(f.data()[0], 2.0);
    assert!((f.data()[1] - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(f.data()[2], 1.0);
    assert!(extract_features(&[], FeatureExtractor::RawStats).is_err());
    assert!(extract_features(&[&constant, &ramp], FeatureExtractor::RawStats).is_err());
}

#[test]
fn encoder_features_are_pooled_frame_embeddings() {
    let cfg = RetrievalConfig { embedding_dim: 8, hidden: 8, ..Default::default() };
    let mut r = rng::seeded(5);
    let model = RetrievalModel::init(&mut r, 4, 6, &cfg);
    let motions: Vec<Tensor> = [9, 14, 3].iter().map(|&n| gaussian(&mut r, n, 6)).collect();
    let refs: Vec<&Tensor> = motions.iter().collect();
    let f = extract_features(&refs, FeatureExtractor::Encoder(&model)).unwrap();
    assert_eq!(f.shape(), &[3, 8]);
    for (i, m) in motions.iter().enumerate() {
        let frames = model.motion_frames(m).unwrap();
        let maxes: Vec<f64> =
            (0..8).map(|c| (0..frames.rows()).map(|t| frames.at(t, c)).fold(f64::NEG_INFINITY, f64::max)).collect();
        let norm = maxes.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..8 {
            assert!((f.at(i, c) - maxes[c] / norm).abs() < 1e-12);
        }
    }
}

#[test]
fn beat_consistency_oracles() {
    let audio = BeatTrack::new(vec![0.5, 1.0, 2.0]).unwrap();
    assert_eq!(beat_consistency_tracks(&audio, &audio, 0.1).unwrap(), Some(1.0));
    let one = BeatTrack::new(vec![1.1]).unwrap();
    assert!((beat_consistency_tracks(&audio, &one, 0.1).unwrap().unwrap() - (-0.5f64).exp()).abs() < 1e-9);
    let mut prev = 1.0 + 1e-12;
    for k in 0..=30 {
        let off = k as f64 * 0.01;
        let grid = BeatTrack::new(vec![0.5, 1.5, 2.5]).unwrap();
        let shifted = BeatTrack::new(grid.times().iter().map(|t| t + off).collect()).unwrap();
        let bc = beat_consistency_tracks(&grid, &shifted, 0.1).unwrap().unwrap();
        assert!(bc < prev);
        prev = bc;
    }
    assert_eq!(beat_consistency_tracks(&audio, &BeatTrack::default(), 0.1).unwrap(), None);
    assert!(beat_consistency_tracks(&BeatTrack::default(), &audio, 0.1).is_err());
    assert!(BeatTrack::new(vec![1.0, 1.0]).is_err());
}

#[test]
fn kinematic_beats_at_speed_minima() {
    // x = cos(2π·t/20): central-difference speed vanishes at multiples of 10 frames.
    let fps = 30.0;
    let n = 61;
    let data: Vec<f64> = (0..n)
        .flat_map(|t| [(2.0 * std::f64::consts::PI * t as f64 / 20.0).cos(), 0.0, 0.0])
        .collect();
    let motion = Tensor::matrix(n, 3, data).unwrap();
    let beats = motion_beats(&motion, 1, fps).unwrap();
    let expected: Vec<f64> = [10, 20, 30, 40, 50].iter().map(|&t| t as f64 / fps).collect();
    assert_eq!(beats.times(), &expected[..]);
    let audio = BeatTrack::new(expected).unwrap();
    assert_eq!(beat_consistency(&audio, &motion, 1, fps, 0.1).unwrap(), Some(1.0));
    assert!(motion_beats(&motion.slice_rows(0, 2), 1, fps).is_err());
    assert!(motion_beats(&Tensor::zeros(&[5, 4]), 1, fps).is_err());
}

proptest! {
    #[test]
    fn beat_consistency_in_unit_interval(a in prop::collection::vec(0.0f64..2.0, 1..10), m in prop::collection::vec(0.0f64..2.0, 1..10)) {
        let track = |mut v: Vec<f64>| { v.sort_by(f64::total_cmp); v.dedup(); BeatTrack::new(v).unwrap() };
        let bc = beat_consistency_tracks(&track(a), &track(m), 0.1).unwrap().unwrap();
        prop_assert!(bc > 0.0 && bc <= 1.0);
    }
}

#[test]
fn diversity_oracles() {
    let same = Tensor::filled(&[4, 3], 1.5);
    assert_eq!(diversity(&same).unwrap(), 0.0);
    let two = Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(diversity(&two).unwrap(), 5.0);
    let rows: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0]];
    let mut brute = 0.0;
    let mut pairs = 0;
    for i in 0..4 {
        for j in 0..4 {
            if i < j {
                brute += ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                pairs += 1;
            }
        }
    }
    assert!((diversity(&Tensor::from_rows(&rows).unwrap()).unwrap() - brute / pairs as f64).abs() < 1e-15);
    assert!(diversity(&same.slice_rows(0, 1)).is_err());
}

proptest! {
    #[test]
    fn diversity_permutation_and_scale(seed in any::<u64>(), n in 2usize..8, s in 0.1f64..10.0) {
        let mut r = rng::seeded(seed);
        let x = gaussian(&mut r, n, 4);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        let d = diversity(&x).unwrap();
        prop_assert!((diversity(&x.select_rows(&idx)).unwrap() - d).abs() < 1e-12);
        prop_assert!((diversity(&x.map(|v| v * s)).unwrap() - s * d).abs() < 1e-10 * (1.0 + s * d));
    }
}

#[test]
fn mpjpe_arithmetic() {
    let gt = Tensor::matrix(1, 6, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let off = 0.003 / 3f64.sqrt();
    let pred = gt.map(|v| v + off);
    assert!((mpjpe(&pred, &gt).unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
    assert!(pa_mpjpe(&gt, &gt).unwrap() < 1e-9);
    assert!(mpjpe(&gt, &gt.clone().reshape(vec![2, 3]).unwrap()).is_err());
    assert!(mpjpe(&Tensor::zeros(&[1, 4]), &Tensor::zeros(&[1, 4])).is_err());
}

fn random_similarity(r: &mut rng::Rng) -> (f64, Rotation3<f64>, Vector3<f64>) {
    let axis = Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
    let t = Vector3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    (r.random_range(0.3..3.0), Rotation3::from_scaled_axis(axis), t)
}

fn transform(x: &Tensor, s: f64, rot: &Rotation3<f64>, t: &Vector3<f64>) -> Tensor {
    let data = x
        .data()
        .chunks(3)
        .flat_map(|p| {
            let y = s * (rot * Vector3::new(p[0], p[1], p[2])) + t;
            [y.x, y.y, y.z]
        })
        .collect();
    Tensor::matrix(x.rows(), x.cols(), data).unwrap()
}

#[test]
fn pa_mpjpe_removes_similarity_transforms() {
    let mut r = rng::seeded(6);
    for _ in 0..100 {
        let gt = gaussian(&mut r, 2, 12 * 3).map(|v| 0.3 * v);
        let (s, rot, t) = random_similarity(&mut r);
        let pred = transform(&gt, s, &rot, &t);
        assert!(mpjpe(&pred, &gt).unwrap() > 0.0);
        assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-6);
    }
}

#[test]
fn pa_mpjpe_never_reflects() {
    let mut r = rng::seeded(7);
    let gt = gaussian(&mut r, 1, 8 * 3);
    let mirrored = Tensor::matrix(1, 24, gt.data().chunks(3).flat_map(|p| [-p[0], p[1], p[2]]).collect()).unwrap();
    assert!(pa_mpjpe(&mirrored, &gt).unwrap() > 1.0);

    // Coincident prediction: unit scale, so it lands on the target centroid.
    let coincident = Tensor::filled(&[1, 9], 0.2);
    let pts = Tensor::matrix(1, 9, vec![0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
    let centroid = Tensor::matrix(1, 9, [1.0, 1.0, 0.0].repeat(3)).unwrap();
    let e = pa_mpjpe(&coincident, &pts).unwrap();
    assert!((e - mpjpe(&centroid, &pts).unwrap()).abs() < 1e-9);
}

proptest! {
    #[test]
    fn pa_mpjpe_bounded_and_invariant(seed in any::<u64>(), joints in 1usize..8, frames in 1usize..4) {
        let mut r = rng::seeded(seed);
        let gt = gaussian(&mut r, frames, joints * 3);
        let pred = gaussian(&mut r, frames, joints * 3);
        let pa = pa_mpjpe(&pred, &gt).unwrap();
        prop_assert!(pa <= mpjpe(&pred, &gt).unwrap() + 1e-9);
        if joints >= 3 {
            let (s, rot, t) = random_similarity(&mut r);
            prop_assert!((pa_mpjpe(&transform(&pred, s, &rot, &t), &gt).unwrap() - pa).abs() < 1e-6);
        }
    }
}

fn samples(r: &mut rng::Rng, n: usize) -> Vec<EvalSample> {
    (0..n)
        .map(|_| {
            let m = gaussian(r, 20, 6).map(|v| 0.1 * v);
            EvalSample { generated: m.clone(), ground_truth: m, audio_beats: BeatTrack::new(vec![0.1, 0.4]).unwrap() }
        })
        .collect()
}

#[test]
fn evaluating_reference_against_itself() {
    let mut r = rng::seeded(8);
    let s = samples(&mut r, 30);
    let refs: Vec<&Tensor> = s.iter().map(|x| &x.ground_truth).collect();
    let fmt = MotionFormat { joints: 2, frame_rate: 30.0 };
    let cfg = MetricsConfig { feature_mode: FeatureMode::RawStats, ..Default::default() };
    let rep = evaluate(&s, &refs, FeatureExtractor::RawStats, fmt, &cfg, "abc").unwrap();
    assert!(rep.fgd < 1e-6);
    assert_eq!((rep.mpjpe_mm, rep.n_gen, rep.n_ref), (0.0, 30, 30));
    assert!(rep.pa_mpjpe_mm < 1e-9);
    let feats = extract_features(&refs, FeatureExtractor::RawStats).unwrap();
    assert_eq!(rep.diversity, diversity(&feats).unwrap());
    assert!(rep.bc > 0.0 && rep.bc <= 1.0);

    let poses = MetricsConfig { diversity_space: DiversitySpace::Poses, ..cfg.clone() };
    let rp = evaluate(&s, &refs, FeatureExtractor::RawStats, fmt, &poses, "abc").unwrap();
    assert!(rp.diversity > rep.diversity);

    assert!(evaluate(&s, &[], FeatureExtractor::RawStats, fmt, &cfg, "abc").is_err());
    assert!(evaluate(&s[..1], &refs, FeatureExtractor::RawStats, fmt, &cfg, "abc").is_err());
}

#[test]
fn report_round_trips() {
    let rep = MetricsReport {
        fgd: 0.1 + 0.2,
        bc: 1.0 / 3.0,
        diversity: std::f64::consts::PI,
        mpjpe_mm: 75.1,
        pa_mpjpe_mm: 39.4,
        n_gen: 39,
        n_ref: 441,
        config_hash: "00ff".into(),
    };
    let back = MetricsReport::from_json(&rep.to_json().unwrap()).unwrap();
    assert_eq!(back.fgd.to_bits(), rep.fgd.to_bits());
    assert_eq!(back, rep);
    let csv = reports_to_csv(&[rep.clone(), rep.clone()]).unwrap();
    assert!(csv.starts_with("fgd,bc,diversity,mpjpe_mm,pa_mpjpe_mm,n_gen,n_ref,config_hash\n"));
    assert_eq!(reports_from_csv(&csv).unwrap(), vec![rep.clone(), rep.clone()]);

    let dir = tempfile::tempdir().unwrap();
    write_report(&rep, dir.path(), "metrics").unwrap();
    let json = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    assert_eq!(MetricsReport::from_json(&json).unwrap(), rep);
}

#[test]
fn control_table_uses_published_column_names() {
    let rows: Vec<ControlRow> = (1..=3)
        .map(|k| ControlRow { method: "exges".into(), frames: k, pa_mpjpe_mm: 30.0 / k as f64, mpjpe_mm: 60.0 / k as f64 })
        .collect();
    let csv = control_table_to_csv(&rows).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "Method,Frame,PAMPJPE (mm),MPJPE (mm)");
    assert_eq!(control_table_from_csv(&csv).unwrap(), rows);
}
