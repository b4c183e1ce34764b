//! Writes a tiny dataset in the line-delimited format, reads it back, and shows
//! how non-monotone label sequences are rejected or dropped.

use mtlds::data::{read_dataset, synthesize, write_dataset, LoadOptions};
use mtlds::SynthConfig;

fn main() -> mtlds::Result<()> {
    let cfg = SynthConfig { users: 5, items: 20, impressions: 2, list_size: 3, latent_dim: 2, ..SynthConfig::default() };
    let ds = synthesize(&cfg)?;
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf)?;
    let text = String::from_utf8(buf).expect("utf-8");
    print!("{text}");

    let back = read_dataset(text.as_bytes(), LoadOptions::default())?;
    assert_eq!(back, ds);
    println!("round trip ok: {:?}", back.stats());

    // a purchase without a click
    let dirty = text.replacen("\t0,0\n", "\t0,1\n", 1);
    match read_dataset(dirty.as_bytes(), LoadOptions::default()) {
        Err(e) => println!("strict load: {e}"),
        Ok(_) => println!("strict load: no 0,0 row to corrupt"),
    }
    let lenient = read_dataset(dirty.as_bytes(), LoadOptions { drop_invalid_labels: true })?;
    println!("lenient load kept {} of {} samples", lenient.sample_count(), ds.sample_count());
    Ok(())
}
