//! Checked-in figure configurations.

use crate::config::{parse_config, ConfigError, ExperimentConfig};

pub const NAMES: [&str; 9] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

pub fn text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig1" => include_str!("../presets/fig1.toml"),
        "fig2" => include_str!("../presets/fig2.toml"),
        "fig3" => include_str!("../presets/fig3.toml"),
        "fig4" => include_str!("../presets/fig4.toml"),
        "fig5" => include_str!("../presets/fig5.toml"),
        "fig6" => include_str!("../presets/fig6.toml"),
        "fig7" => include_str!("../presets/fig7.toml"),
        "fig8" => include_str!("../presets/fig8.toml"),
        "fig9" => include_str!("../presets/fig9.toml"),
        _ => return None,
    })
}

pub fn load(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let text = text(name).ok_or_else(|| {
        ConfigError::new("<preset>", format!("one of {}", NAMES.join(", ")), format!("{name:?}"))
    })?;
    parse_config(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::to_toml;

    #[test]
    fn every_preset_parses_and_round_trips() {
        for name in NAMES {
            let c = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.name, name);
            assert_eq!(parse_config(&to_toml(&c)).unwrap(), c, "{name}");
            c.scaled(0.1).unwrap_or_else(|e| panic!("{name} scaled: {e}"));
        }
        assert!(load("fig10").is_err());
    }
}
