//! End-to-end run over the default 50 m x 50 m two-layer forest.
//!
//! ```sh
//! cargo run --release --example full_pipeline -- [out_dir]
//! ```

use std::path::PathBuf;

use sylva::cli::{run_pipeline, PipelineConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("sylva_out"));
    let cfg = PipelineConfig::from_toml("seed = 42", &[]).expect("default config");
    match run_pipeline(&cfg, &out) {
        Ok(report) => {
            println!("dataset        {}", report.dataset_name);
            println!("trees          {} ({:.0} /ha)", report.instances, report.stem_density_per_ha);
            println!("voxels         {}", report.occupied_voxels);
            println!("pulses         {}", report.survey.pulse_count);
            println!("points         {}", report.survey.point_count);
            println!("density        {:.1} pts/m2", report.survey.mean_density);
            println!("max returns    {}", report.survey.max_returns_seen);
            for t in &report.timings {
                println!("  {:<10} {:.2} s", t.stage.to_string(), t.seconds);
            }
        }
        Err(f) => {
            eprintln!("{f}");
            std::process::exit(f.exit_code());
        }
    }
}
