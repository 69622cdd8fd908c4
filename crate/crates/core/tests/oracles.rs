//! Reference values computed independently at 40-digit precision.

use fastlloyd::{calibrate_sigma, default_delta, gdp_delta, split_sigma};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs()
}

#[test]
fn default_delta_at_ten_thousand() {
    assert!(close(default_delta(10_000).unwrap(), 1.085_736_204_758_129_6e-5, 1e-15));
}

#[test]
fn gdp_delta_reference_points() {
    for (eps, theta, want) in [
        (0.5, 0.3, 0.007_573_480_585_463_177),
        (1.0, 1.0, 0.126_936_737_506_643_95),
        (0.1, 0.05, 0.000_446_191_864_884_704_1),
    ] {
        let got = gdp_delta(eps, theta);
        assert!(close(got, want, 1e-9), "delta({eps}, {theta}) = {got}, want {want}");
    }
}

#[test]
fn calibrated_sigma_reference_points() {
    let n_ln_n = 1.0 / default_delta(10_000).unwrap();
    for (eps, delta, want) in [
        (0.1, 1e-5, 30.749_566_131_977_45),
        (0.5, 1e-5, 7.031_826_675_582_491),
        (1.0, 1.0 / n_ln_n, 3.712_116_888_734_913_6),
    ] {
        let sigma = calibrate_sigma(eps, delta).unwrap();
        assert!(sigma >= want, "sigma({eps}, {delta}) = {sigma} is below the exact root {want}");
        assert!(close(sigma, want, 1e-8), "sigma({eps}, {delta}) = {sigma}, want {want}");
    }
}

#[test]
fn split_reference_point() {
    let (r, c) = split_sigma(3.712_116_888_734_913_6, 2);
    assert!(close(r, 4.318_762_667_444_634, 1e-14));
    assert!(close(c, 7.263_264_090_771_527, 1e-14));
}
