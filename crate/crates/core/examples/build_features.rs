use pi_sentry::aggregate::{build_table, prune, DefaultValues};
use pi_sentry::features::{feature_matrix, FEATURE_NAMES};
use pi_sentry::{KvPair, KvSource, TrafficRecord};

fn rec(user: &str, app: &str, domain: &str, kvs: &[(&str, &str)]) -> TrafficRecord {
    TrafficRecord {
        user_id: user.into(),
        app_id: app.into(),
        timestamp: 0,
        domain: domain.into(),
        path: "/".into(),
        kvs: kvs.iter().map(|(k, v)| KvPair::new(*k, *v, KvSource::Query)).collect(),
    }
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    // Two users of a chat app and a game that embeds the same analytics SDK.
    let mut records = Vec::new();
    for (i, user) in ["alice", "bob"].iter().enumerate() {
        let device = format!("86{:013}", 4_400_000 + i);
        for t in 0..5 {
            let ts = (1_600_000_000 + t * 37 + i * 1000).to_string();
            records.push(rec(user, "chat", "im.example", &[("dev", &device), ("ts", &ts), ("ver", "7.0.3")]));
            records.push(rec(user, "game", "sdk.example", &[("d", &device), ("lvl", &t.to_string())]));
        }
        records.push(rec(user, "chat", "im.example", &[("dev", "unknown"), ("ver", "7.0.3")]));
    }

    let table = build_table(&records, &DefaultValues::default())?;
    let (table, report) = prune(&table);
    println!("{} pairs kept, {} pruned", table.pairs.len(), report.total());

    let matrix = feature_matrix(&table)?;
    print!("{:<24}", "");
    for pair in matrix.keys() {
        print!("{:>12}", pair.to_string());
    }
    println!();
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        print!("{name:<24}");
        for fv in matrix.values() {
            print!("{:>12.3}", fv.to_array()[i]);
        }
        println!();
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
