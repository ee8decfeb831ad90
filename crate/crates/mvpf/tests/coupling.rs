//! Convergence rates of the law approximation and its synchronous coupling.
//!
//! Reduced-scale versions of the benchmark oracles: fewer particles and seeds
//! than the full acceptance settings, with correspondingly widened windows.

use mvpf::lattice::{derive_seed, LevelGrid, Role, RngStream, StreamId};
use mvpf::law::{propagate_law, propagate_law_coupled};
use mvpf::model::{ModelSpec, ParticleCloud};

fn stream(seed: u64, level: u32) -> RngStream {
    RngStream::new(
        seed,
        StreamId {
            replication: 0,
            role: Role::Law,
            level,
        },
    )
}

/// Least-squares slope of y against x.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    sxy / sxx
}

#[test]
fn synchronous_coupling_error_is_first_order_in_dt() {
    // E (1/m) sum_i |X_f^i(1) - X_c^i(1)|^2 should scale like Delta_l, so
    // log2 of the error against the level has slope near -1. The rate is only
    // visible when the diffusion term dominates: with constant (or weakly
    // state-dependent) diffusion the noise cancels under the synchronous
    // coupling and the error decays at the deterministic rate Delta^2 until
    // far finer levels. Hence sigma = 1 here. Reduced scale: m = 50, levels
    // 2..5, 32 seeds; the full criterion uses m = 100, levels 2..6, 64 seeds
    // with window [0.7, 1.3].
    let model = ModelSpec::modified_kuramoto(0.3, 1.0, 1.0);
    let m = 50;
    let levels: Vec<u32> = (2..=5).collect();
    let mut log_errs = Vec::new();
    for &level in &levels {
        let fine = LevelGrid::new(level);
        let start = ParticleCloud::dirac(&model.x0, m).unwrap();
        let mut total = 0.0;
        for rep in 0..32u64 {
            let seed = derive_seed(9001, "coupling-rate", &[level as u64, rep]);
            let mut s = stream(seed, level);
            let (lat_f, lat_c) =
                propagate_law_coupled(&model, fine, m, &start, &start, &mut s).unwrap();
            let mut err = 0.0;
            for (xf, xc) in lat_f.terminal().rows().zip(lat_c.terminal().rows()) {
                let d = xf[0] - xc[0];
                err += d * d;
            }
            total += err / m as f64;
        }
        log_errs.push((total / 32.0).log2());
    }
    let xs: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
    let s = slope(&xs, &log_errs);
    assert!(
        (-1.4..=-0.6).contains(&s),
        "coupling error slope {s:.3} outside [-1.4, -0.6]; log2 errors {log_errs:?}"
    );
}

#[test]
fn law_mean_variance_decays_like_one_over_m() {
    // The terminal cloud mean is an average of m exchangeable particles whose
    // correlations vanish at rate 1/m, so its variance across independent
    // runs scales like 1/m.
    let model = ModelSpec::kuramoto(0.2, 0.3, 1.0);
    let grid = LevelGrid::new(4);
    let ms = [10usize, 40, 160];
    let reps = 64u64;
    let mut log_vars = Vec::new();
    for &m in &ms {
        let start = ParticleCloud::dirac(&model.x0, m).unwrap();
        let mut means = Vec::with_capacity(reps as usize);
        for rep in 0..reps {
            let seed = derive_seed(7101, "law-variance", &[m as u64, rep]);
            let mut s = stream(seed, grid.level());
            let lat = propagate_law(&model, grid, m, &start, &mut s).unwrap();
            means.push(lat.terminal().mean()[0]);
        }
        let avg = means.iter().sum::<f64>() / reps as f64;
        let var =
            means.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / (reps as f64 - 1.0);
        log_vars.push(var.ln());
    }
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let s = slope(&xs, &log_vars);
    assert!(
        (-1.3..=-0.7).contains(&s),
        "law mean variance slope {s:.3} outside [-1.3, -0.7]; ln vars {log_vars:?}"
    );
}

#[test]
fn coupled_marginals_start_identically_and_stay_close_at_high_level() {
    // At level 8 one unit of coupled propagation should leave fine and coarse
    // particles within a small pathwise distance for every particle.
    let model = ModelSpec::modified_kuramoto(0.1, 0.2, 1.0);
    let m = 30;
    let fine = LevelGrid::new(8);
    let start = ParticleCloud::dirac(&model.x0, m).unwrap();
    let mut s = stream(31, 8);
    let (lat_f, lat_c) = propagate_law_coupled(&model, fine, m, &start, &start, &mut s).unwrap();
    for (xf, xc) in lat_f.terminal().rows().zip(lat_c.terminal().rows()) {
        assert!(
            (xf[0] - xc[0]).abs() < 0.2,
            "fine {xf:?} vs coarse {xc:?} drifted apart at level 8"
        );
    }
}
