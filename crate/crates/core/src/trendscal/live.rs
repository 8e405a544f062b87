//! Client for a JSON trends endpoint.
//!
//! Request: `GET <endpoint>?q=<comma-joined queries>&geo=<country>&start=<YYYY-MM-DD>&end=<YYYY-MM-DD>&key=<api key>`.
//! Response: `{"series": [{"query": "...", "values": [int, ...] | null}, ...]}`
//! in request order, one value per week of the period.

use std::time::Duration;

use serde::Deserialize;

use super::{Period, QuerySeries, RawGroupResponse, TrendsError, TrendsProvider};
use crate::net::{HttpError, JsonClient, RetryPolicy};

pub const TRENDS_API_KEY_VAR: &str = "TRENDS_API_KEY";

impl From<HttpError> for TrendsError {
    fn from(e: HttpError) -> Self {
        let retriable = e.is_retriable();
        match e {
            HttpError::Decode(m) => TrendsError::Contract(m),
            other => TrendsError::Transport { message: other.to_string(), retriable },
        }
    }
}

pub struct LiveTrendsProvider {
    client: JsonClient,
    endpoint: String,
    api_key: String,
}

impl LiveTrendsProvider {
    /// Retries are left to [`super::fetch_group`]; the client only paces requests.
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, min_interval: Duration) -> Result<Self, TrendsError> {
        let client = JsonClient::new(min_interval, Duration::from_secs(60), RetryPolicy::no_wait(1))?;
        Ok(LiveTrendsProvider { client, endpoint: endpoint.into(), api_key: api_key.into() })
    }

    pub fn from_env(endpoint: impl Into<String>, min_interval: Duration) -> Result<Self, TrendsError> {
        let key = std::env::var(TRENDS_API_KEY_VAR)
            .map_err(|_| TrendsError::Transport { message: format!("{TRENDS_API_KEY_VAR} is not set"), retriable: false })?;
        Self::new(endpoint, key, min_interval)
    }
}

impl TrendsProvider for LiveTrendsProvider {
    fn fetch_group(&self, queries: &[String], country: &str, period: &Period) -> Result<RawGroupResponse, TrendsError> {
        let params = [
            ("q", queries.join(",")),
            ("geo", country.to_string()),
            ("start", period.start.monday().to_string()),
            ("end", period.end.sunday().to_string()),
            ("key", self.api_key.clone()),
        ];
        let json = self.client.get_json(&self.endpoint, &params)?;
        parse_group_response(&json, queries, country, period)
    }
}

#[derive(Deserialize)]
struct Wire {
    series: Vec<WireSeries>,
}

#[derive(Deserialize)]
struct WireSeries {
    query: String,
    values: Option<Vec<u32>>,
}

/// Decodes an endpoint response; contract checks happen in [`super::fetch_group`].
pub fn parse_group_response(
    json: &serde_json::Value,
    queries: &[String],
    country: &str,
    period: &Period,
) -> Result<RawGroupResponse, TrendsError> {
    let wire: Wire = serde_json::from_value(json.clone()).map_err(|e| TrendsError::Contract(e.to_string()))?;
    let resp = RawGroupResponse {
        country: country.to_string(),
        period: *period,
        series: wire.series.into_iter().map(|s| QuerySeries { query: s.query, values: s.values }).collect(),
    };
    resp.validate(queries)?;
    Ok(resp)
}
