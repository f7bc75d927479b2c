use std::path::Path;

use complex_rank::dataset::SyntheticConfig;
use complex_rank::experiment::{DatasetSpec, ExperimentConfig, SweepConfig};

// LETOR paths point at data users supply themselves; everything else must
// validate as shipped
fn without_files(c: &mut ExperimentConfig) {
    if matches!(c.dataset, DatasetSpec::Letor { .. }) {
        c.dataset = DatasetSpec::Synthetic(SyntheticConfig::default());
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let checked = if name.starts_with("sweep") {
            let mut s = SweepConfig::from_path(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            without_files(&mut s.base);
            s.validate()
        } else {
            let mut c = ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            without_files(&mut c);
            c.validate()
        };
        checked.unwrap_or_else(|e| panic!("{name}: {e}"));
        seen += 1;
    }
    assert!(seen >= 5);
}
