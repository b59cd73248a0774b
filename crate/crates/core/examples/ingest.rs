//! Cleans a raw rating log: rating threshold, k-core filter, dense ids.

use llmhd::runner;

fn main() -> llmhd::Result<()> {
    let root = std::env::temp_dir().join("llmhd-example-ingest");
    std::fs::create_dir_all(&root).map_err(|e| llmhd::Error::io(&root, e))?;
    let mut raw = String::new();
    for u in 0..6 {
        for i in 0..5 {
            let rating = 1 + (u * 3 + i * 2) % 5;
            raw.push_str(&format!("u{u}\tbook-{i}\t{rating}\n"));
        }
    }
    raw.push_str("loner\tbook-99\t5\n");
    let profiles: String = (0..5)
        .map(|i| format!("{{\"item_id\":\"book-{i}\",\"title\":\"Book {i}\",\"description\":\"A novel.\"}}\n"))
        .collect();
    for (name, text) in [("ratings.tsv", raw), ("items.jsonl", profiles)] {
        let path = root.join(name);
        std::fs::write(&path, text).map_err(|e| llmhd::Error::io(&path, e))?;
    }

    let summary = runner::ingest(
        &root.join("ratings.tsv"),
        Some(&root.join("items.jsonl")),
        Some(3),
        Some(2),
        '\t',
        &root.join("clean"),
    )?;
    println!("{summary:#?}");
    Ok(())
}
