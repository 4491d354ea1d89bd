#![allow(dead_code)]

pub mod consistency;

use std::net::SocketAddr;
use std::sync::Arc;

use undr_core::harness::{generate_catalog, table1_setup};
use undr_core::{FacetSchema, Product, SelectionRecord};
use undr_server::{serve_on, EngineState, ServerConfig};

pub fn survey(seed: u64) -> (FacetSchema, Vec<Product>, Vec<SelectionRecord>) {
    let (schema, pool, _) = table1_setup(seed).unwrap();
    let catalog = generate_catalog(182, &schema, seed);
    (schema, catalog, pool)
}

pub fn open(dir: &std::path::Path, seed_records: Vec<SelectionRecord>, min_pool: usize) -> EngineState {
    let (schema, catalog, _) = survey(7);
    let mut config = ServerConfig::new(dir);
    config.min_pool = min_pool;
    EngineState::open(schema, catalog, seed_records, config).unwrap()
}

pub async fn spawn(state: Arc<EngineState>) -> String {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, state, std::future::pending()));
    format!("http://{addr}/api/v1")
}
