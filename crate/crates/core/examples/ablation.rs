//! Full objective vs. cross-entropy only on the synthetic benchmark.
//!
//! `cargo run --release --example ablation -- [seeds] [synth-seed]`

use std::time::Instant;

use misd_core::data_io::{gen_synth, SynthConfig};
use misd_core::metrics::{full_report, ScoresKind};
use misd_core::trainer::{embed_for_eval, score_embeddings, synthetic_backbone, train, TrainConfig};

fn main() -> misd_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let synth = SynthConfig { seed: args.next().and_then(|s| s.parse().ok()).unwrap_or(0), ..SynthConfig::default() };
    let start = Instant::now();
    let backbone = synthetic_backbone(&synth)?;
    let train_set = gen_synth(&synth, "train")?;
    let val = embed_for_eval(&gen_synth(&synth, "val")?, &backbone)?;

    println!("seed  variant  acc     auroc   e_aurc  fpr95");
    let mut wins = 0;
    let mut auroc = [0.0; 2];
    let mut acc = [0.0; 2];
    for seed in 0..seeds {
        let mut e_aurc = [0.0; 2];
        for (v, (lambda_neg, lambda_orth)) in [(None, None), (Some(0.0), Some(0.0))].into_iter().enumerate() {
            let mut config = TrainConfig { seed, ..TrainConfig::default() };
            config.loss.lambda_neg = lambda_neg.unwrap_or(config.loss.lambda_neg);
            config.loss.lambda_orth = lambda_orth.unwrap_or(config.loss.lambda_orth);
            let model = train(&train_set, &config, &backbone)?;
            let report = full_report(&score_embeddings(&model, &val)?, ScoresKind::Classified)?;
            let [a, r, e, f] = [report.acc, report.auroc, report.e_aurc, report.fpr95].map(|m| m.unwrap_or(f64::NAN));
            println!("{seed:<5} {:<8} {a:<7.2} {r:<7.2} {e:<7.2} {f:<7.2}", if v == 0 { "full" } else { "ce" });
            acc[v] += a / seeds as f64;
            auroc[v] += r / seeds as f64;
            e_aurc[v] = e;
        }
        if e_aurc[0] <= e_aurc[1] {
            wins += 1;
        }
    }
    println!(
        "mean acc full {:.2} ce {:.2}; auroc full {:.2} ce {:.2}; e_aurc wins {wins}/{seeds}; {:.1?}",
        acc[0],
        acc[1],
        auroc[0],
        auroc[1],
        start.elapsed()
    );
    Ok(())
}
