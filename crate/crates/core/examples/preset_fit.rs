//! Fits one draw of the normal-error simulation design and prints the
//! normalized estimates next to the truth.

use ssgd_core::sim::{generate, Preset};
use ssgd_core::{normalize_scale, run_ssgd_average, sandwich_for_result, SandwichOptions, SsgdConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(5000), |s| s.parse())?;
    let refit_every: usize = args.next().map_or(Ok(1), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;

    let preset = Preset::PaperNormal;
    let data = generate(&preset.spec(n, seed))?;
    let config = SsgdConfig {
        refit_every,
        seed,
        ..preset.config()
    };
    let fit = run_ssgd_average(&data, &config, None)?;
    let truth = normalize_scale(&preset.spec(n, seed).beta0)?;
    let (_, vcov) = sandwich_for_result(&data, &fit, SandwichOptions::default())?;
    let ci = ssgd_core::inference::normalized_intervals(&fit.beta_avg, &vcov, 0, 0.95)?;
    println!("fit took {:.2}s over {} iterations", fit.seconds, fit.iterations_run);
    println!("{:>8} {:>10} {:>10} {:>10}", "truth", "average", "final", "se");
    let last = normalize_scale(&fit.beta_final)?;
    for (j, t) in truth.iter().enumerate() {
        println!(
            "{:>8.3} {:>10.4} {:>10.4} {:>10.4}",
            t, ci[j].estimate, last[j], ci[j].std_error
        );
    }
    Ok(())
}
