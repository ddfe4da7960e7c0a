use rangeguard_web::demo::{flip, restriction_curve, Session};

#[test]
fn flip_reports_both_layouts() {
    let v = flip(1.0, 30).unwrap();
    assert_eq!(v["before"]["hex"], "0x3f800000");
    assert_eq!(v["after"]["hex"], "0x7f800000");
    assert_eq!(v["after"]["finite"], false);
    assert_eq!(v["before"]["exponent"], 127);
    assert!(flip(1.0, 32).is_err());
}

#[test]
fn curve_shapes() {
    let c = restriction_curve(-1.0, 1.0, -2.0, 2.0, 5).unwrap();
    let clip: Vec<f64> = c["clip_to_zero"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let clamp: Vec<f64> = c["clamp"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(clip, [0.0, -1.0, 0.0, 1.0, 0.0]);
    assert_eq!(clamp, [-1.0, -1.0, 0.0, 1.0, 1.0]);
    assert!(restriction_curve(1.0, -1.0, 0.0, 1.0, 5).is_err());
}

#[test]
fn injection_trace() {
    let s = Session::new(0, 1).unwrap();
    let layers = s.layers();
    let ffn1 = layers
        .as_array()
        .unwrap()
        .iter()
        .find(|l| l["name"] == "encoder0.ffn1")
        .unwrap()["layer_id"]
        .as_u64()
        .unwrap() as usize;
    let v = s.inject(0, ffn1, 3, 30, "global_clipper").unwrap();
    assert_eq!(v["policy"], "global_clipper");
    assert_eq!(v["nan_inf"]["mitigated"], false);
    let rows = v["layers"].as_array().unwrap();
    assert_eq!(rows.len(), layers.as_array().unwrap().len());
    assert!(rows.iter().any(|r| r["protected"] == true));
    assert!(s.inject(99, ffn1, 0, 30, "none").is_err());
    assert!(s.inject(0, ffn1, 0, 30, "maybe").is_err());
}
