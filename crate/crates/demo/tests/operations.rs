use paygap_demo::{compare_estimators_json, lasso_path_json, support_curve_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn support_curve_has_one_step_per_block() {
    let v = parse(&support_curve_json("private", 3000, 1).unwrap());
    let steps = v["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 5);
    let shares: Vec<f64> = steps.iter().map(|s| s["share_focal"].as_f64().unwrap()).collect();
    assert!(shares.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!((v["truth"]["raw_gap"].as_f64().unwrap() + 0.186).abs() < 1e-9);
}

#[test]
fn public_sector_leaves_focal_rows_off_support() {
    let v = parse(&support_curve_json("public", 3000, 2).unwrap());
    // focal-only occupations enter with the firm block
    assert_eq!(v["steps"][0]["share_focal"].as_f64().unwrap(), 1.0);
    assert!(v["steps"][4]["share_focal"].as_f64().unwrap() < 0.9);
}

#[test]
fn estimator_comparison_covers_the_parametric_grid() {
    let v = parse(&compare_estimators_json("private", 4000, 3, 2).unwrap());
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(v["support"], "S2");
    let bo = rows.iter().find(|r| r["estimator"] == "BO" && r["regime"] == "baseline").unwrap();
    assert!(bo["delta"].as_f64().unwrap() < 0.0);
}

#[test]
fn lasso_path_reports_the_one_se_choice() {
    let v = parse(&lasso_path_json("private", 2000, 4, "wage").unwrap());
    let lam = v["lambda"].as_array().unwrap();
    assert!(lam.len() >= 5);
    assert!(v["idx_1se"].as_u64().unwrap() <= v["idx_min"].as_u64().unwrap());
    assert_eq!(v["selected"][0], 0);
    let p = parse(&lasso_path_json("private", 2000, 4, "propensity").unwrap());
    assert!(p["candidates"].as_u64().unwrap() > 10);
}

#[test]
fn invalid_requests_are_rejected() {
    assert!(support_curve_json("hospital", 1000, 1).is_err());
    assert!(support_curve_json("private", 10, 1).is_err());
    assert!(compare_estimators_json("private", 1000, 1, 9).is_err());
    assert!(lasso_path_json("private", 1000, 1, "both").is_err());
}
