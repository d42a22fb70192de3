//! Builds a small hash-chained ledger, round-trips it through text and
//! binary form, and shows a single edited byte breaking the chain.
use certgrid::audit::{ledger_verify, Ledger, RecordKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut l = Ledger::new();
    l.append(RecordKind::Submission, 100, "job-0001", "<SJDL>...</SJDL>");
    l.append(RecordKind::Countersign, 102, "job-0001", "<SJDL>...</SJDL>");
    l.append(RecordKind::SiteLog, 105, "job-0001", "site=siteA\nuid=20000");
    l.append(RecordKind::Finalize, 170, "job-0001", "DONE");
    println!("{}", l.to_tsv());
    println!("head {}", hex::encode(l.head()));

    let from_text = Ledger::from_tsv(&l.to_tsv())?;
    let from_binary = Ledger::from_binary(&l.to_binary())?;
    println!("text copy intact: {}", ledger_verify(&from_text));
    println!("binary copy intact: {}", ledger_verify(&from_binary));

    let mut forged = from_text;
    forged.records_mut()[2].body = "site=siteA\nuid=10000".into();
    println!("after editing record 2: {}", ledger_verify(&forged));
    Ok(())
}
