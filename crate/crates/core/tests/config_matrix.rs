use proptest::prelude::*;

use author_repr::experiment::ExperimentConfig;
use author_repr::Error;

const FAMILIES: [(&str, &str); 4] = [
    ("Autoregressive", ""),
    ("MaskedEncoder", ""),
    ("HuLM", "mode = \"OneDocPerBlock\"\n"),
    ("HuLM", "mode = \"ConcatBlocks\"\n"),
];
const POOLERS: [&str; 5] = ["CLS", "AT", "LT", "LT_INSEP", "U"];
const LEVELS: [&str; 3] = ["document", "wave", "user"];

/// The availability table, written out case by case.
fn expected(family: usize, pooler: &str, level: &str) -> bool {
    match (family, pooler) {
        (_, "AT") => true,
        (1, "CLS") => true,
        (0 | 2 | 3, "LT") => true,
        (2 | 3, "LT_INSEP") => true,
        (2, "U") => true,
        (3, "U") => level != "document",
        _ => false,
    }
}

fn config(family: usize, pooler: &str, level: &str, layer: Option<&str>) -> String {
    let (name, extra) = FAMILIES[family];
    let layer = layer
        .map(|l| format!(", layer = \"{l}\""))
        .unwrap_or_default();
    format!(
        "seed = 1\ncorpus_path = \"c.jsonl\"\noutput_dir = \"o\"\nlevels = [\"{level}\"]\noutcomes = [\"valence\"]\n\
         repr_specs = [{{ model_tag = \"m\", pooler = \"{pooler}\", level = \"{level}\"{layer} }}]\n\
         [[models]]\ntag = \"m\"\nfamily = \"{name}\"\n{extra}"
    )
}

#[test]
fn every_pooler_family_level_combination() {
    let mut accepted = 0;
    for family in 0..FAMILIES.len() {
        for pooler in POOLERS {
            for level in LEVELS {
                let res = ExperimentConfig::parse(&config(family, pooler, level, None), true);
                if expected(family, pooler, level) {
                    assert!(
                        res.is_ok(),
                        "{:?} {pooler} {level}: {:?}",
                        FAMILIES[family],
                        res.err()
                    );
                    accepted += 1;
                } else {
                    assert!(
                        matches!(res, Err(Error::InvalidSpec(_))),
                        "{:?} {pooler} {level}",
                        FAMILIES[family]
                    );
                }
            }
        }
    }
    // AT, CLS, LT and LT_INSEP at every level, then U
    assert_eq!(accepted, 3 * (4 + 1 + 3 + 2) + 3 + 2);
}

#[test]
fn auto_agrees_with_the_table() {
    for family in 0..FAMILIES.len() {
        let raw = config(family, "AT", "user", None)
            .replace(
                "levels = [\"user\"]",
                "levels = [\"document\", \"wave\", \"user\"]",
            )
            .replace(
                "repr_specs = [{ model_tag = \"m\", pooler = \"AT\", level = \"user\" }]",
                "repr_specs = \"auto\"",
            );
        let cfg = ExperimentConfig::parse(&raw, true).unwrap();
        let got: Vec<(String, String)> = cfg
            .resolved_specs()
            .unwrap()
            .iter()
            .map(|s| (s.pooler.to_string(), s.level.to_string()))
            .collect();
        for pooler in POOLERS {
            for level in LEVELS {
                let present = got.contains(&(pooler.to_string(), level.to_string()));
                assert_eq!(
                    present,
                    expected(family, pooler, level),
                    "{:?} {pooler} {level}",
                    FAMILIES[family]
                );
            }
        }
    }
}

proptest! {
    #[test]
    fn validation_matches_table(family in 0..4usize, p in 0..5usize, l in 0..3usize, layer in prop::option::of(prop::sample::select(vec!["L", "SL"]))) {
        let res = ExperimentConfig::parse(&config(family, POOLERS[p], LEVELS[l], layer), true);
        prop_assert_eq!(res.is_ok(), expected(family, POOLERS[p], LEVELS[l]));
    }

    #[test]
    fn hash_tracks_semantic_fields(seed in 0u64..1000, k in 2usize..20, lr in 0.01f64..1.0, out in "[a-z]{1,8}") {
        let base = |seed: u64, k: usize, lr: f64, out: &str| {
            let raw = format!(
                "seed = {seed}\ncorpus_path = \"c.jsonl\"\noutput_dir = \"{out}\"\nlevels = [\"user\"]\noutcomes = [\"valence\"]\n\
                 [cv]\nk = {k}\n[[models]]\ntag = \"m\"\nfamily = \"Autoregressive\"\nlearning_rate = {lr:?}\n"
            );
            ExperimentConfig::parse(&raw, true).unwrap().hash()
        };
        let h = base(seed, k, lr, "o");
        prop_assert_eq!(&h, &base(seed, k, lr, &out));
        prop_assert_ne!(&h, &base(seed + 1, k, lr, "o"));
        prop_assert_ne!(&h, &base(seed, k + 1, lr, "o"));
        prop_assert_ne!(&h, &base(seed, k, lr * 2.0, "o"));
    }
}
