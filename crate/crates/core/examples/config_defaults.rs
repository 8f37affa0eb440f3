//! Print the full default experiment configuration as TOML. Any subset of it
//! is a valid `--config` file for the `gasfm` binary.

use gasfm::evaluation::ExperimentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", toml::to_string_pretty(&ExperimentConfig::default())?);
    Ok(())
}
