// temporary: long learning probe at default size
use cmoe::config::RunConfig;
use cmoe::sim::reward::TERM_NAMES;
use cmoe::terrain::TerrainClass;
use cmoe::trainer::Trainer;
use std::time::Instant;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.train.classes = vec![TerrainClass::Flat, TerrainClass::Slope, TerrainClass::Gap];
    cfg.train.iterations = 2000;
    let mut tr = Trainer::new(cfg).unwrap();
    let t0 = Instant::now();
    let mut ep_sum = 0.0;
    let mut ep_n = 0usize;
    for i in 0..2000 {
        let stats = tr.run_iteration().unwrap();
        tr.iteration += 1;
        ep_sum += stats.ep_return_sum;
        ep_n += stats.ep_count;
        if (i + 1) % 25 == 0 {
            let ep_mean = if ep_n > 0 { ep_sum / ep_n as f64 } else { f64::NAN };
            println!(
                "iter {:4}  r/step {:7.3}  ep_ret(25) {:9.2}  eps {:4}  level {:.2}  gate_H {:.3}  act_H {:.2}  {:.0?}",
                i + 1, stats.reward_mean, ep_mean, ep_n, stats.level_mean,
                stats.gate_entropy, stats.update.entropy, t0.elapsed()
            );
            ep_sum = 0.0;
            ep_n = 0;
        }
        if (i + 1) % 200 == 0 {
            let mut terms: Vec<(usize, f64)> = stats
                .term_means
                .iter()
                .copied()
                .enumerate()
                .collect();
            terms.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let worst: Vec<String> = terms
                .iter()
                .take(5)
                .map(|&(k, v)| format!("{} {:.2}", TERM_NAMES[k], v))
                .collect();
            println!("        worst terms: {}", worst.join(", "));
        }
    }
}
