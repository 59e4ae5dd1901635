use evsched::forecast::{difference, fit_arima, integrate, ArimaOrders};
use evsched::rng::stream;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn orders(p: usize, q: usize, sp: usize, sq: usize, m: usize) -> ArimaOrders {
    ArimaOrders {
        p,
        d: 0,
        q,
        seasonal_p: sp,
        seasonal_d: 0,
        seasonal_q: sq,
        season: m,
    }
}

/// x_t = phi x_{t-1} + Phi x_{t-m} - phi Phi x_{t-m-1} + e_t + theta e_{t-1} + Theta e_{t-m} + theta Theta e_{t-m-1}
fn simulate(
    n: usize,
    phi: f64,
    theta: f64,
    sphi: f64,
    stheta: f64,
    m: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = stream(seed, "arima-sim");
    let burn = 500;
    let total = n + burn;
    let e: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = vec![0.0; total];
    let at = |v: &[f64], t: usize, l: usize| if t >= l { v[t - l] } else { 0.0 };
    for t in 0..total {
        x[t] = phi * at(&x, t, 1) + sphi * at(&x, t, m) - phi * sphi * at(&x, t, m + 1)
            + e[t]
            + theta * at(&e, t, 1)
            + stheta * at(&e, t, m)
            + theta * stheta * at(&e, t, m + 1);
    }
    x.split_off(burn)
}

#[test]
fn ar1_recovers_phi() {
    let x = simulate(2000, 0.8, 0.0, 0.0, 0.0, 1, 11);
    let m = fit_arima(&x, orders(1, 0, 0, 0, 1)).unwrap();
    assert!(m.converged);
    assert!((0.75..=0.85).contains(&m.ar[0]), "phi {}", m.ar[0]);
}

#[test]
fn ma1_recovers_theta() {
    let x = simulate(2000, 0.0, 0.5, 0.0, 0.0, 1, 12);
    let m = fit_arima(&x, orders(0, 1, 0, 0, 1)).unwrap();
    assert!((m.ma[0] - 0.5).abs() <= 0.05, "theta {}", m.ma[0]);
}

#[test]
fn arma11_recovers_both() {
    let x = simulate(3000, 0.6, -0.3, 0.0, 0.0, 1, 13);
    let m = fit_arima(&x, orders(1, 1, 0, 0, 1)).unwrap();
    assert!((m.ar[0] - 0.6).abs() <= 0.05, "phi {}", m.ar[0]);
    assert!((m.ma[0] + 0.3).abs() <= 0.05, "theta {}", m.ma[0]);
}

#[test]
fn seasonal_ar_and_ma_recovered() {
    let x = simulate(3000, 0.5, 0.0, 0.0, 0.4, 12, 14);
    let m = fit_arima(&x, orders(1, 0, 0, 1, 12)).unwrap();
    assert!((m.ar[0] - 0.5).abs() <= 0.05, "phi {}", m.ar[0]);
    assert!(
        (m.seasonal_ma[0] - 0.4).abs() <= 0.05,
        "Theta {}",
        m.seasonal_ma[0]
    );

    let x = simulate(3000, 0.0, 0.3, 0.6, 0.0, 12, 15);
    let m = fit_arima(&x, orders(0, 1, 1, 0, 12)).unwrap();
    assert!((m.ma[0] - 0.3).abs() <= 0.05, "theta {}", m.ma[0]);
    assert!(
        (m.seasonal_ar[0] - 0.6).abs() <= 0.05,
        "Phi {}",
        m.seasonal_ar[0]
    );
}

#[test]
fn intercept_recovered_for_stationary_mean() {
    let x: Vec<f64> = simulate(2000, 0.5, 0.0, 0.0, 0.0, 1, 16)
        .iter()
        .map(|v| v + 3.0)
        .collect();
    let m = fit_arima(&x, orders(1, 0, 0, 0, 1)).unwrap();
    // c = mu (1 - phi)
    assert!((m.intercept - 1.5).abs() <= 0.1, "c {}", m.intercept);
}

proptest! {
    #[test]
    fn integrate_undoes_difference(
        x in prop::collection::vec(-100.0f64..100.0, 12..40),
        d in 0usize..3,
        sd in 0usize..2,
        m in 1usize..5,
    ) {
        prop_assume!(x.len() > d + sd * m);
        let lost = d + sd * m;
        let w = difference(&x, d, sd, m).unwrap();
        prop_assert_eq!(w.len(), x.len() - lost);
        let back = integrate(&x[..lost], &w, d, sd, m).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()));
        }
    }
}
