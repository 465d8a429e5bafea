//! Request lifecycle records and the latency histogram a run produces.

use std::collections::BTreeMap;

use crate::proto::{NodeId, ServiceQuery, Timestamp};

/// How a discovery request ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestOutcome {
    /// Satisfied from the requester's own tables; latency is exactly 0.
    LocalHit,
    /// Answered by a reply from the network.
    Completed,
    /// No answer by the end of the horizon.
    Unanswered,
}

/// Lifecycle of one generated request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub node: NodeId,
    /// Workload tick the request was generated on.
    pub tick_index: usize,
    /// Position within that tick's burst.
    pub slot: usize,
    pub query: ServiceQuery,
    pub start: Timestamp,
    /// Present iff the outcome is not `Unanswered`; never before `start`.
    pub end: Option<Timestamp>,
    pub outcome: RequestOutcome,
    /// Provider named by the completing answer, when there was one.
    pub provider: Option<NodeId>,
}

impl RequestRecord {
    pub fn latency(&self) -> Option<f64> {
        self.end.map(|end| end - self.start)
    }
}

/// One histogram bucket: `[start, end)` with its count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub start: f64,
    pub end: f64,
    pub count: u64,
}

/// Everything a run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub total_requests: u64,
    /// Includes local hits.
    pub completed: u64,
    pub local_hits: u64,
    pub unanswered: u64,
    /// Latencies of completed requests; counts sum to `completed`.
    pub histogram: Vec<Bucket>,
    pub messages_sent_by_kind: BTreeMap<String, u64>,
}

impl MetricsReport {
    pub fn from_records(
        records: &[RequestRecord],
        bucket_width: f64,
        messages_sent_by_kind: BTreeMap<String, u64>,
    ) -> Self {
        let total_requests = records.len() as u64;
        let mut completed = 0u64;
        let mut local_hits = 0u64;
        let mut unanswered = 0u64;
        let mut latencies = Vec::new();
        for record in records {
            match record.outcome {
                RequestOutcome::LocalHit => {
                    completed += 1;
                    local_hits += 1;
                    latencies.push(record.latency().expect("local hit has an end time"));
                }
                RequestOutcome::Completed => {
                    completed += 1;
                    latencies.push(record.latency().expect("completed request has an end time"));
                }
                RequestOutcome::Unanswered => unanswered += 1,
            }
        }
        debug_assert_eq!(completed + unanswered, total_requests);
        let histogram = bucketize(&latencies, bucket_width);
        debug_assert_eq!(histogram.iter().map(|b| b.count).sum::<u64>(), completed);
        MetricsReport {
            total_requests,
            completed,
            local_hits,
            unanswered,
            histogram,
            messages_sent_by_kind,
        }
    }

    /// Count in `[0, bucket_width)`; 0 when the histogram is empty.
    pub fn first_bucket_count(&self) -> u64 {
        self.histogram.first().map_or(0, |b| b.count)
    }

    /// `bucket_start_s,bucket_end_s,count` with 3-decimal fixed-point
    /// times, one row per bucket, LF line endings.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bucket_start_s,bucket_end_s,count\n");
        for bucket in &self.histogram {
            out.push_str(&format!(
                "{:.3},{:.3},{}\n",
                bucket.start, bucket.end, bucket.count
            ));
        }
        out
    }

    /// `total,completed,local_hits,unanswered` header plus one data row.
    pub fn summary_csv(&self) -> String {
        format!(
            "total,completed,local_hits,unanswered\n{},{},{},{}\n",
            self.total_requests, self.completed, self.local_hits, self.unanswered
        )
    }

    /// One human-readable line for the console.
    pub fn summary_line(&self) -> String {
        let messages: Vec<String> = self
            .messages_sent_by_kind
            .iter()
            .map(|(kind, count)| format!("{kind}={count}"))
            .collect();
        format!(
            "total={} completed={} local_hits={} unanswered={} sent[{}]",
            self.total_requests,
            self.completed,
            self.local_hits,
            self.unanswered,
            messages.join(" ")
        )
    }
}

/// Half-open buckets `[k*w, (k+1)*w)`; a latency exactly on a boundary
/// falls in the upper bucket. Trailing empty buckets are omitted,
/// interior ones kept.
pub fn bucketize(latencies: &[f64], bucket_width: f64) -> Vec<Bucket> {
    assert!(bucket_width > 0.0, "bucket width must be positive");
    let mut counts: Vec<u64> = Vec::new();
    for &latency in latencies {
        debug_assert!(latency >= 0.0);
        let mut index = (latency / bucket_width).floor() as usize;
        // Settle boundary cases exactly against the bucket edges as
        // they will be reported, not against the division result.
        while (index + 1) as f64 * bucket_width <= latency {
            index += 1;
        }
        while index > 0 && index as f64 * bucket_width > latency {
            index -= 1;
        }
        if counts.len() <= index {
            counts.resize(index + 1, 0);
        }
        counts[index] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| Bucket {
            start: k as f64 * bucket_width,
            end: (k + 1) as f64 * bucket_width,
            count,
        })
        .collect()
}
