//! Named experiment presets. Each entry resolves to a fully explicit
//! `ExperimentFile`; every parameter can still be patched with
//! `--override key=value`.

use crate::config::{ExperimentFile, FiveBitFile, RunFile, SurfaceFile};

fn run(label: String, variant: &str, matrix: &str, readout: &str, n: usize, d: usize) -> RunFile {
    RunFile {
        label,
        variant: variant.into(),
        matrix: matrix.into(),
        readout: readout.into(),
        n,
        d_alphabet: d,
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
        e: 1000,
        m: 0,
        r: 3000,
        g: None,
        train_seqs: None,
        test_seqs: 128,
        d_max: 25,
        trials: 10,
        seed: None,
        lambda: None,
        snr_train_db: None,
        snr_test_db: None,
        cov_horizon: None,
        theory_iid: None,
        theory_full: false,
        theory_indep: false,
        geometry: false,
    }
}

fn stream_file(name: &str, runs: Vec<RunFile>) -> ExperimentFile {
    ExperimentFile { name: name.into(), task: "stream".into(), seed: 0, runs, surface: None, fivebit: None }
}

fn fixed_file(name: &str, runs: Vec<RunFile>) -> ExperimentFile {
    ExperimentFile { name: name.into(), task: "fixed".into(), seed: 0, runs, surface: None, fivebit: None }
}

/// Registered experiment names with one-line descriptions.
pub fn list() -> Vec<(&'static str, &'static str)> {
    vec![
        ("fig2", "linear unit dynamics: recall accuracy vs sequence length, theory overlay"),
        ("fig3", "linear dynamics with decay: accuracy vs delay for three decay rates"),
        ("fig4", "saturating dynamics: accuracy vs delay for three input gains"),
        ("fig5", "leaky saturating dynamics: regression readout with measured-moment predictions"),
        ("fig6", "analytic memory-capacity surface over input gain and decay"),
        ("fig7", "fixed-length recall: readout construction comparison at G=64"),
        ("fig8", "readout-row geometry across alphabet sizes (simplex collapse)"),
        ("figS1", "predictor-tier separation on constructed moment instances"),
        ("figS2", "analytic capacity surface for leaky saturating dynamics"),
        ("figS3", "saturating dynamics with decay: accuracy vs delay over a gain/decay grid"),
        ("figS4", "regression readout under measurement noise, with geometry"),
        ("figS5", "streaming readout construction comparison for two alphabet sizes"),
        ("figS6", "5-bit memory task: minimal reservoir size vs distractor period"),
    ]
}

/// Build the preset for a registered name.
pub fn build(name: &str) -> Option<ExperimentFile> {
    match name {
        "fig2" => {
            let mut runs = Vec::new();
            for &n in &[256usize, 1024] {
                for &d in &[4usize, 16] {
                    for &g in &[2usize, 4, 8, 16, 32, 64, 128, 256] {
                        let mut r = run(
                            format!("fig2:N={n},D={d},G={g}"),
                            "V1",
                            "random_orthogonal",
                            "codebook",
                            n,
                            d,
                        );
                        r.g = Some(g);
                        r.d_max = g - 1;
                        r.theory_iid = Some("analytic".into());
                        runs.push(r);
                    }
                }
            }
            Some(fixed_file("fig2", runs))
        }
        "fig3" => {
            let mut runs = Vec::new();
            for &gamma in &[0.98, 0.90, 0.70] {
                for &n in &[256usize, 1024] {
                    for &d in &[4usize, 16] {
                        let mut r = run(
                            format!("fig3:gamma={gamma},N={n},D={d}"),
                            "V2",
                            "permutation",
                            "codebook",
                            n,
                            d,
                        );
                        r.gamma = gamma;
                        r.theory_iid = Some("analytic".into());
                        runs.push(r);
                    }
                }
            }
            Some(stream_file("fig3", runs))
        }
        "fig4" => {
            let mut runs = Vec::new();
            for &beta in &[0.125, 0.25, 0.5] {
                let mut r = run(
                    format!("fig4:beta={beta}"),
                    "V3",
                    "permutation",
                    "codebook",
                    1024,
                    4,
                );
                r.beta = beta;
                r.theory_iid = Some("analytic".into());
                runs.push(r);
            }
            Some(stream_file("fig4", runs))
        }
        "fig5" => {
            let mut runs = Vec::new();
            for &alpha in &[0.99, 0.9, 0.8, 0.6] {
                let mut r = run(
                    format!("fig5:alpha={alpha}"),
                    "V5",
                    "random_orthogonal",
                    "regression",
                    256,
                    4,
                );
                r.alpha = alpha;
                r.beta = 0.0625;
                r.gamma = 0.98;
                r.m = 8192;
                r.theory_full = true;
                r.theory_indep = true;
                r.theory_iid = Some("measured".into());
                runs.push(r);
            }
            Some(stream_file("fig5", runs))
        }
        "fig6" => Some(ExperimentFile {
            name: "fig6".into(),
            task: "surface".into(),
            seed: 0,
            runs: Vec::new(),
            surface: Some(SurfaceFile {
                variant: "V4".into(),
                n: 256,
                d_alphabet: 2,
                alpha: 1.0,
                beta_min: 0.0,
                beta_max: 0.5,
                beta_step: 0.01,
                gamma_min: 0.5,
                gamma_max: 1.5,
                gamma_step: 0.01,
                d_max: 1024,
                steps: 200_000,
            }),
            fivebit: None,
        }),
        "fig7" => {
            let mut runs = Vec::new();
            let base = |label: String, readout: &str| {
                let mut r = run(label, "V1", "random_orthogonal", readout, 256, 8);
                r.g = Some(64);
                r.test_seqs = 2048;
                r.d_max = 25;
                r
            };
            runs.push(base("fig7:codebook".into(), "codebook"));
            runs.push(base("fig7:cov_coarse".into(), "cov_coarse"));
            runs.push(base("fig7:cov_fine".into(), "cov_fine"));
            for &m in &[128usize, 512, 2048, 5000, 8192] {
                let mut r = base(format!("fig7:regression,M={m}"), "regression");
                r.train_seqs = Some(m);
                runs.push(r);
            }
            Some(fixed_file("fig7", runs))
        }
        "fig8" => {
            let mut runs = Vec::new();
            for &d in &[2usize, 4, 8, 16, 32] {
                for readout in ["codebook", "regression", "cov_coarse", "cov_fine"] {
                    let mut r = run(
                        format!("fig8:D={d},{readout}"),
                        "V2",
                        "random_orthogonal",
                        readout,
                        256,
                        d,
                    );
                    r.gamma = 0.9;
                    r.r = 5000;
                    r.trials = 20;
                    r.geometry = true;
                    if readout == "regression" {
                        r.m = 5000;
                    }
                    runs.push(r);
                }
            }
            Some(stream_file("fig8", runs))
        }
        "figS1" => Some(ExperimentFile {
            name: "figS1".into(),
            task: "tiers".into(),
            seed: 0,
            runs: Vec::new(),
            surface: None,
            fivebit: None,
        }),
        "figS2" => Some(ExperimentFile {
            name: "figS2".into(),
            task: "surface".into(),
            seed: 0,
            runs: Vec::new(),
            surface: Some(SurfaceFile {
                variant: "V5".into(),
                n: 256,
                d_alphabet: 8,
                alpha: 0.99,
                beta_min: 0.0,
                beta_max: 0.5,
                beta_step: 0.02,
                gamma_min: 0.5,
                gamma_max: 1.2,
                gamma_step: 0.02,
                d_max: 1024,
                steps: 200_000,
            }),
            fivebit: None,
        }),
        "figS3" => {
            let mut runs = Vec::new();
            for &beta in &[0.125, 0.25, 0.5] {
                for &gamma in &[0.99, 0.9, 0.7] {
                    let mut r = run(
                        format!("figS3:beta={beta},gamma={gamma}"),
                        "V4",
                        "permutation",
                        "codebook",
                        1024,
                        4,
                    );
                    r.beta = beta;
                    r.gamma = gamma;
                    r.theory_iid = Some("analytic".into());
                    runs.push(r);
                }
            }
            Some(stream_file("figS3", runs))
        }
        "figS4" => {
            let mut runs = Vec::new();
            for snr in [None, Some(30.0), Some(10.0), Some(0.0)] {
                let label = match snr {
                    None => "figS4:noiseless".to_string(),
                    Some(v) => format!("figS4:snr={v}dB"),
                };
                let mut r = run(label, "V2", "random_orthogonal", "regression", 256, 4);
                r.gamma = 0.9;
                r.m = 5000;
                r.snr_train_db = snr;
                r.snr_test_db = snr;
                r.geometry = true;
                runs.push(r);
            }
            Some(stream_file("figS4", runs))
        }
        "figS5" => {
            let mut runs = Vec::new();
            for &d in &[8usize, 16] {
                for readout in ["codebook", "regression", "cov_coarse", "cov_fine"] {
                    let mut r = run(
                        format!("figS5:D={d},{readout}"),
                        "V2",
                        "random_orthogonal",
                        readout,
                        256,
                        d,
                    );
                    r.gamma = 0.9;
                    if readout == "regression" {
                        r.m = 5000;
                    }
                    runs.push(r);
                }
            }
            Some(stream_file("figS5", runs))
        }
        "figS6" => Some(ExperimentFile {
            name: "figS6".into(),
            task: "fivebit".into(),
            seed: 0,
            runs: Vec::new(),
            surface: None,
            fivebit: Some(FiveBitFile {
                t_list: vec![5, 10, 15, 20, 25, 30],
                mode: "both".into(),
                beta: 1.0 / 64.0,
                gamma: 0.99,
                target: 0.99,
                seeds: 50,
                episodes: 400_000,
                n_max: 1 << 15,
            }),
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    #[test]
    fn every_listed_name_builds_and_resolves() {
        for (name, _) in list() {
            let file = build(name).unwrap_or_else(|| panic!("{name} not registered"));
            assert_eq!(file.name, name);
            file.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(build("nonexistent").is_none());
    }

    #[test]
    fn decay_preset_matches_caption_protocol() {
        let f = build("fig3").unwrap();
        assert_eq!(f.runs.len(), 12);
        let gammas: Vec<f64> = f.runs.iter().map(|r| r.gamma).collect();
        assert!(gammas.contains(&0.98) && gammas.contains(&0.90) && gammas.contains(&0.70));
        for r in &f.runs {
            assert_eq!((r.e, r.m, r.r), (1000, 0, 3000));
            assert_eq!(r.variant, "V2");
            assert_eq!(r.matrix, "permutation");
            assert_eq!(r.readout, "codebook");
            assert!([256, 1024].contains(&r.n));
            assert!([4, 16].contains(&r.d_alphabet));
        }
    }

    #[test]
    fn surface_preset_has_caption_grid() {
        let f = build("fig6").unwrap();
        match f.resolve().unwrap() {
            Experiment::Surface(s) => {
                assert_eq!(s.betas().unwrap().len() * s.gammas().unwrap().len(), 51 * 101);
            }
            _ => panic!("wrong task"),
        }
    }
}
