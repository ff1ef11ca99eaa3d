use std::collections::BTreeSet;

use privpgd::data_model::{ingest_reader, write_csv_to, SchemaSpec};
use privpgd::evaluation::{evaluate_all, EvalConfig};
use privpgd::fixture::{generate, FixtureSpec};
use rand::{Rng, SeedableRng};

const SCHEMA: &str = r#"{"columns":[
  {"name":"age","kind":"integer","bins":10},
  {"name":"sex","kind":"categorical","categories":["f","m"]},
  {"name":"income","kind":"continuous","bins":16},
  {"name":"hours","kind":"continuous"},
  {"name":"region","kind":"categorical","categories":["n","e","s","w","c"]},
  {"name":"kids","kind":"integer","bins":4},
  {"name":"score","kind":"continuous","bins":7},
  {"name":"owner","kind":"categorical","categories":["no","yes"]},
  {"name":"rooms","kind":"integer"},
  {"name":"commute","kind":"continuous","bins":5},
  {"name":"edu","kind":"categorical","categories":["a","b","c"]}
]}"#;

fn raw_csv(rows: usize) -> String {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut out = String::from("age,sex,income,hours,region,kids,score,owner,rooms,commute,edu\n");
    for _ in 0..rows {
        let line = format!(
            "{},{},{:.3},{:.2},{},{},{:.4},{},{},{:.1},{}\n",
            r.random_range(18..90),
            ["f", "m"][r.random_range(0..2)],
            r.random::<f64>() * 1e5,
            r.random::<f64>() * 60.0,
            ["n", "e", "s", "w", "c"][r.random_range(0..5)],
            r.random_range(0..6),
            r.random::<f64>() - 0.5,
            ["no", "yes"][r.random_range(0..2)],
            r.random_range(1..12),
            r.random::<f64>() * 90.0,
            ["a", "b", "c"][r.random_range(0..3)],
        );
        out.push_str(&line);
    }
    out
}

#[test]
fn eleven_column_export_reingests_byte_identical() {
    let spec: SchemaSpec = serde_json::from_str(SCHEMA).unwrap();
    let data = ingest_reader(raw_csv(2000).as_bytes(), &spec).unwrap();
    assert_eq!(data.dim(), 11);
    assert_eq!(data.n(), 2000);

    let mut first = Vec::new();
    write_csv_to(&data, &mut first).unwrap();

    let echo = serde_json::to_string(&SchemaSpec::from_schema(data.schema())).unwrap();
    let echo: SchemaSpec = serde_json::from_str(&echo).unwrap();
    let again = ingest_reader(first.as_slice(), &echo).unwrap();
    assert_eq!(SchemaSpec::from_schema(again.schema()), SchemaSpec::from_schema(data.schema()));

    let mut second = Vec::new();
    write_csv_to(&again, &mut second).unwrap();
    assert_eq!(first, second);
}

fn keys(v: &serde_json::Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn metrics_report_matches_published_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../metrics_report.schema.json")).unwrap();
    let required: BTreeSet<String> = schema["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k.as_str().unwrap().to_string())
        .collect();
    assert_eq!(required, keys(&schema["properties"]));

    let a = generate(&FixtureSpec { rows: 500, seed: 1, ..Default::default() }).unwrap();
    let b = generate(&FixtureSpec { rows: 400, seed: 2, ..Default::default() }).unwrap();
    let report = evaluate_all(&a, &b, &EvalConfig { queries: 20, sw1_projections: 20, seed: 3 }).unwrap();
    let v = serde_json::to_value(&report).unwrap();
    assert_eq!(keys(&v), required);
    assert_eq!(keys(&v["seeds"]), keys(&schema["properties"]["seeds"]["properties"]));
    for (k, prop) in schema["properties"].as_object().unwrap() {
        let types: Vec<&str> = match &prop["type"] {
            serde_json::Value::String(s) => vec![s.as_str()],
            serde_json::Value::Array(a) => a.iter().map(|t| t.as_str().unwrap()).collect(),
            _ => unreachable!(),
        };
        let actual = match &v[k] {
            serde_json::Value::Null => "null",
            serde_json::Value::Number(n) if n.is_u64() && types.contains(&"integer") => "integer",
            serde_json::Value::Number(_) => "number",
            serde_json::Value::Object(_) => "object",
            serde_json::Value::Array(_) => "array",
            other => panic!("{k}: unexpected {other}"),
        };
        assert!(types.contains(&actual), "{k} is {actual}, schema allows {types:?}");
    }
}

#[test]
fn identical_tables_score_zero() {
    let a = generate(&FixtureSpec { rows: 800, seed: 5, ..Default::default() }).unwrap();
    let r = evaluate_all(&a, &a, &EvalConfig { queries: 30, sw1_projections: 30, seed: 0 }).unwrap();
    assert_eq!(r.covariance_error, 0.0);
    assert_eq!(r.avg_tv, 0.0);
    assert_eq!(r.avg_sw1, 0.0);
    assert_eq!(r.counting_error, Some(0.0));
    assert_eq!(r.thresholding_error, Some(0.0));
}
