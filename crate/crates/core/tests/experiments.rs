mod common;

use common::*;
use dgn_spline::experiments::{
    affine_fit_residuals, angle_study, generate_random_net, linear_capacity_study, logdet_study, median,
    random_subspace_angles, summarize_angles, xavier_bound, AngleRow, AngleSource, CapacitySpec, LogDetStudySpec,
    RandomNetSpec, RescaleMode,
};
use dgn_spline::{Activation, Error};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn leaky() -> Activation {
    Activation::leaky_relu(0.2).unwrap()
}

#[test]
fn random_nets_are_reproducible_and_bounded() {
    let spec = RandomNetSpec::new(3, 7, vec![5, 6], leaky(), 17);
    let a = generate_random_net(&spec).unwrap();
    assert_eq!(a, generate_random_net(&spec).unwrap());
    for layer in a.layers() {
        let bound = xavier_bound(layer.in_dim(), layer.out_dim());
        assert!(layer.weights().amax() <= bound);
        assert!(layer.bias().iter().all(|&b| b == 0.0));
    }
}

#[test]
fn random_subspaces_in_high_dimension_are_far_apart() {
    let angles = random_subspace_angles(64, 2, 500, 3);
    assert!(median(&angles) > 1.0);
}

#[test]
fn angle_rows_round_trip_through_csv() {
    let study = angle_study(&RandomNetSpec::new(2, 6, vec![4, 4], leaky(), 1), 30, 2).unwrap();
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &study.rows {
        writer.serialize(row).unwrap();
    }
    let text = String::from_utf8(writer.into_inner().unwrap()).unwrap();
    assert!(text.starts_with("angle,source\n"));
    let back: Vec<AngleRow> = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(back, study.rows);
    let summary = summarize_angles(&back);
    assert_eq!(summary[1].source, AngleSource::Random);
    assert_eq!(summary[1].count, 30);
}

#[test]
fn few_pairs_are_skipped_at_width_twice_latent() {
    let study = angle_study(&RandomNetSpec::new(4, 12, vec![8, 8], leaky(), 5), 300, 6).unwrap();
    assert!((study.skipped as f64) < 0.01 * 300.0, "{}", study.skipped);
}

#[test]
fn logdet_study_grows_with_second_scale() {
    let run = |sigma2| {
        let spec = LogDetStudySpec {
            net: LogDetStudySpec::default_net(4),
            sigma1: 1.0,
            sigma2,
            rescale: RescaleMode::InitBound,
        };
        logdet_study(&spec, 300, 5).unwrap().mean()
    };
    assert!(run(1.0) < run(2.0));
}

/// Sum of squared distances from the rows of `data` to the affine line
/// through `point` along `dir`.
fn line_sse(data: &DMatrix<f64>, point: &DVector<f64>, dir: &DVector<f64>) -> f64 {
    let u = dir.normalize();
    data.row_iter()
        .map(|row| {
            let v = row.transpose() - point;
            (&v - &u * u.dot(&v)).norm_squared()
        })
        .sum()
}

#[test]
fn least_squares_fit_beats_random_lines() {
    let mut r = rng(51);
    for _ in 0..10 {
        let data = gaussian_matrix(&mut r, 5, 3);
        let best: f64 = affine_fit_residuals(&data, &[1])[0].iter().map(|e| e * e).sum();
        for _ in 0..2000 {
            let point = gaussian_vector(&mut r, 3) * 2.0;
            let dir = gaussian_vector(&mut r, 3);
            assert!(line_sse(&data, &point, &dir) >= best - 1e-12);
        }
        // perturbing the exact optimum never helps either
        let mean = DVector::from_fn(3, |c, _| data.column(c).mean());
        let centered = DMatrix::from_fn(5, 3, |i, c| data[(i, c)] - mean[c]);
        let top = centered.svd(false, true).v_t.unwrap().row(0).transpose();
        assert!((line_sse(&data, &mean, &top) - best).abs() <= 1e-9);
        for _ in 0..200 {
            let jitter = gaussian_vector(&mut r, 3) * 1e-3;
            assert!(line_sse(&data, &(&mean + &jitter), &(&top + jitter * r.random::<f64>())) >= best - 1e-12);
        }
    }
}

#[test]
fn capacity_error_is_nonincreasing_in_latent_size() {
    let spec = CapacitySpec {
        trials: 5,
        ..CapacitySpec::standard()
    };
    let rows = linear_capacity_study(&spec, 9).unwrap();
    for &n in &spec.n_range {
        let series: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.e_star).collect();
        assert!(series.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
    assert_eq!(rows, linear_capacity_study(&spec, 9).unwrap());
}

#[test]
fn capacity_needs_enough_points() {
    let spec = CapacitySpec {
        n_range: vec![5],
        ..CapacitySpec::standard()
    };
    assert!(matches!(linear_capacity_study(&spec, 1), Err(Error::InsufficientData(_))));
}

#[test]
fn xavier_weights_have_the_expected_variance() {
    let net = generate_random_net(&RandomNetSpec::new(256, 4, vec![256], leaky(), 3)).unwrap();
    let w = net.layers()[1].weights();
    assert_eq!(w.shape(), (4, 256));
    let w = net.layers()[0].weights();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let expected = 2.0 / 512.0;
    assert!((var - expected).abs() <= 0.1 * expected, "{var} vs {expected}");
}

#[test]
fn all_linear_net_has_no_angles() {
    let spec = RandomNetSpec::new(2, 5, vec![4], Activation::linear(), 1);
    assert!(matches!(angle_study(&spec, 10, 1), Err(Error::NoBoundaries)));
}

#[test]
fn zero_scales_collapse_every_region() {
    let spec = LogDetStudySpec {
        net: LogDetStudySpec::default_net(2),
        sigma1: 0.0,
        sigma2: 0.0,
        rescale: RescaleMode::Values,
    };
    let study = logdet_study(&spec, 20, 3).unwrap();
    assert!(study.rows.is_empty());
    assert!(study.degenerate >= 1);
}

#[test]
fn csv_reaggregation_is_exact() {
    let study = angle_study(&RandomNetSpec::new(3, 8, vec![6, 6], leaky(), 4), 200, 5).unwrap();
    let summary = summarize_angles(&study.rows);
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &study.rows {
        writer.serialize(row).unwrap();
    }
    let bytes = writer.into_inner().unwrap();
    let back: Vec<AngleRow> = csv::Reader::from_reader(&bytes[..]).deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(summarize_angles(&back), summary);
}
