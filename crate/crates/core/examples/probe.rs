// temporary probe: bias and stderr of the Gaussian histogram fit
use pairtime_core::*;
use pairtime_core::fitting::fit_histogram;

fn main() {
    let sigma_det = 16.7;
    let truth = (2.0f64).sqrt() * sigma_det;
    let det = DetectorSim {
        response: ResponseModel::Gaussian { mu_ps: 0.0, sigma_ps: sigma_det },
        efficiency: 1.0,
        dark_rate_hz: 4.0e6,
        delay_ps: 0.0,
        dead_time_ps: 0,
    };
    let mut sigmas = vec![];
    let mut errs = vec![];
    let mut floors = vec![];
    let mut chi2s = vec![];
    for seed in 0..30u64 {
        let cfg = SimConfig {
            pair_rate_hz: 5.0e4,
            duration_s: 0.2,
            seed: 5000 + seed,
            detector_a: det.clone(),
            detector_b: det.clone(),
        };
        let out = simulate(&cfg).unwrap();
        let h = cross_correlation(&out.stream_a, &out.stream_b, (-1000, 1000), 2).unwrap();
        let fit = fit_histogram(&h, ModelFamily::Gaussian, 0.0, None, None).unwrap();
        let s = fit.param("sigma_ps").unwrap();
        let f = fit.param("floor").unwrap();
        let n = fit.param("n_pairs").unwrap();
        sigmas.push(s.value);
        errs.push(s.stderr);
        floors.push(f.value);
        chi2s.push(fit.reduced_chi2);
        if seed < 5 {
            println!("seed {seed}: sigma {:.4} +- {:.4}  n {:.0} +- {:.0}  floor {:.3} +- {:.3}  chi2red {:.4} bins {}",
                s.value, s.stderr, n.value, n.stderr, f.value, f.stderr, fit.reduced_chi2, fit.n_fit_bins);
        }
    }
    let mean: f64 = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    let sd: f64 = (sigmas.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (sigmas.len() - 1) as f64).sqrt();
    let mean_err: f64 = errs.iter().sum::<f64>() / errs.len() as f64;
    let mean_floor: f64 = floors.iter().sum::<f64>() / floors.len() as f64;
    let mean_chi2: f64 = chi2s.iter().sum::<f64>() / chi2s.len() as f64;
    let exp_floor = expected_accidentals(&SimConfig {
        pair_rate_hz: 5.0e4, duration_s: 0.2, seed: 0,
        detector_a: det.clone(), detector_b: det.clone(),
    }, 2);
    println!("truth sigma {truth:.4}");
    println!("mean sigma {mean:.4} (bias {:+.4}), empirical sd {sd:.4}, mean stderr {mean_err:.4}", mean - truth);
    println!("mean floor {mean_floor:.4} vs analytic {exp_floor:.4}");
    println!("mean chi2red {mean_chi2:.4}");
}
