use ohz_demo::{fscil_json, osr_json, shrinkage_json};

#[test]
fn osr_curves_span_the_unit_square() {
    let v = osr_json("knn", 8.0, 1.0, 1).unwrap();
    let roc = v["roc"].as_array().unwrap();
    assert!(roc.len() <= 200);
    assert_eq!(roc.first().unwrap(), &serde_json::json!([0.0, 0.0]));
    assert_eq!(roc.last().unwrap(), &serde_json::json!([1.0, 1.0]));
    assert!(v["auroc"].as_f64().unwrap() > 99.0);
    assert!(v["decision"]["ood_rejection_rate"].as_f64().unwrap() >= 0.95);
    let hist = &v["histogram"];
    let total = |k: &str| hist[k].as_array().unwrap().iter().map(|n| n.as_u64().unwrap()).sum::<u64>();
    assert_eq!(total("id"), 6 * 60);
    assert_eq!(total("ood"), 4 * 60);
}

#[test]
fn osr_is_deterministic_and_rejects_unknown_kinds() {
    assert_eq!(osr_json("energy", 3.0, 2.0, 5).unwrap(), osr_json("energy", 3.0, 2.0, 5).unwrap());
    assert!(osr_json("odin", 3.0, 1.0, 0).is_err());
}

#[test]
fn shrinkage_falls_with_sample_count() {
    let v = shrinkage_json(16, 0).unwrap();
    let pts = v["points"].as_array().unwrap();
    let lambda = |i: usize| pts[i]["lambda"].as_f64().unwrap();
    assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p["lambda"].as_f64().unwrap())));
    assert!(lambda(pts.len() - 1) < lambda(0));
    assert!(shrinkage_json(1, 0).is_err());
}

#[test]
fn fscil_reports_every_method_and_session() {
    let v = fscil_json(10.0, 5, 0).unwrap();
    let runs = v["runs"].as_array().unwrap();
    let names: Vec<&str> = runs.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["baseline", "sppr", "orco", "concm"]);
    for r in runs {
        assert_eq!(r["sessions"].as_array().unwrap().len(), 4);
    }
    assert!(fscil_json(10.0, 0, 0).is_err());
}
