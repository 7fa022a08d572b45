use piwno::config::{Example, ExperimentConfig};

fn load(name: &str) -> ExperimentConfig {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    ExperimentConfig::from_toml(&text, &[]).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn full_scale_configs_restate_the_defaults() {
    for (file, ex) in [
        ("diffusion_reaction.toml", Example::DiffusionReaction),
        ("nagumo.toml", Example::Nagumo),
        ("darcy.toml", Example::Darcy),
        ("allen_cahn.toml", Example::AllenCahn),
    ] {
        let c = load(file);
        let mut d = ExperimentConfig::defaults(ex);
        d.seed = c.seed;
        assert_eq!(c, d, "{file}");
    }
}

#[test]
fn toy_config_is_small() {
    let c = load("toy_diffusion_reaction.toml");
    assert_eq!(c.example, Example::DiffusionReaction);
    assert_eq!(c.resolution, 41);
    assert!(c.n_train <= 100 && c.train.epochs <= 100);
}
