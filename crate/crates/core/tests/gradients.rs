mod common;

use som_multipath::model::Model;
use som_multipath::nn::init_normal;

use common::{dataset, finite_difference_check, prepared, tiny_model_config};

pub const GROUPS: [&str; 11] = [
    "enc.image.",
    "enc.lidar.",
    "enc.radar.",
    "fusion.eca.",
    "fusion.proj",
    "embed.",
    "backbone.",
    "lora.",
    "head.cls.",
    "head.power.",
    "head.delay.",
];

#[test]
fn analytic_gradients_match_central_differences() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 10, 17);
    let config = tiny_model_config();
    let data = prepared(&ds, "train", &config);
    let batch: Vec<_> = data.iter().take(3).collect();
    let mut model = Model::new(config).unwrap();
    model.activate_lora();
    let names: Vec<String> = model
        .store
        .iter()
        .filter(|(n, _)| n.starts_with("lora.") && n.ends_with(".b"))
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let p = model.store.get_mut(&name).unwrap();
        let (r, c) = p.value.dim();
        p.value = init_normal(99, &name, r, c, 0.05);
    }
    let report = finite_difference_check(&mut model, &batch, &GROUPS, 110, 7);
    assert!(report.checked >= 100);
    eprintln!(
        "{} checked, {} nonzero, max rel {:e}",
        report.checked, report.nonzero, report.max_rel
    );
    assert!(report.nonzero * 10 >= report.checked * 8, "{report:?}");
    assert!(report.max_rel < 1e-3, "worst {}: {:e}", report.worst, report.max_rel);
}
