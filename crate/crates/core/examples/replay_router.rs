//! Serves a calibrated chain over HTTP using recorded model outputs, sends a
//! few requests and prints the routing responses and counters.
//!
//! cargo run --example replay_router

use std::sync::Arc;

use hcma::calibration::fit_platt;
use hcma::chain::{ChainConfig, CostKind};
use hcma::records::{generate_synthetic, ModelProfile, SyntheticSpec};
use hcma::router::{app, RouteResponse, Router, StatsSnapshot};
use hcma::transforms::TransformKind;
use serde_json::json;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(200, 4))?;
    let members = dataset
        .model_ids()
        .iter()
        .zip([0.3, 0.8, 5.0])
        .map(|(id, cost)| {
            let calibrator =
                fit_platt(&dataset.pairs(id)?, TransformKind::MaxSoftmax, 1e-4)?.with_model_id(id);
            Ok(ModelProfile::new(id, cost)?.with_calibrator(calibrator))
        })
        .collect::<hcma::Result<Vec<_>>>()?;
    let config = ChainConfig::new(members, vec![0.2, 0.25, 0.4], vec![0.7, 0.75])?;
    let router = Arc::new(Router::replay(config, &dataset, CostKind::Dollars)?);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move { axum::serve(listener, app(router)).await });
    println!("listening on http://{addr}");

    let client = reqwest::Client::new();
    for record in &dataset.records()[..8] {
        let response: RouteResponse = client
            .post(format!("http://{addr}/v1/route"))
            .json(&json!({"query": "replayed question", "query_id": record.query_id}))
            .send()
            .await?
            .json()
            .await?;
        let path: Vec<String> = response
            .hops
            .iter()
            .map(|h| format!("{}:{:?}", h.model_id, h.decision))
            .collect();
        println!(
            "{}: {:?} via {} (cost {:.2})",
            record.query_id,
            response.status,
            path.join(" -> "),
            response.effective_cost
        );
    }
    let stats: StatsSnapshot = client
        .get(format!("http://{addr}/stats"))
        .send()
        .await?
        .json()
        .await?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
