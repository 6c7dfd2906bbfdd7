//! Scenario files shipped with the crate.

use crate::error::{Error, Result};
use crate::harness::scenario::Scenario;

pub const PRESETS: [(&str, &str); 4] = [
    ("curved_gamma10", include_str!("../../presets/curved_gamma10.toml")),
    ("curved_gamma80", include_str!("../../presets/curved_gamma80.toml")),
    (
        "straight_theta-170",
        include_str!("../../presets/straight_theta-170.toml"),
    ),
    ("ring_1000", include_str!("../../presets/ring_1000.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

pub fn preset(name: &str) -> Result<Scenario> {
    let src = preset_source(name).ok_or_else(|| {
        Error::config(format!(
            "unknown preset '{name}' (available: {})",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    Scenario::from_toml_str(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in names() {
            let s = preset(name).unwrap();
            assert_eq!(s.name, name);
            s.validate().unwrap();
            assert!(!s.acceptance.is_empty(), "{name} declares no acceptance checks");
        }
    }

    #[test]
    fn unknown_preset_lists_the_known_ones() {
        let err = preset("nope").unwrap_err().to_string();
        assert!(err.contains("ring_1000"), "{err}");
    }
}
