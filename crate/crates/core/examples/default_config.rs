//! Print the default run configuration as JSON. Redirect it to a file,
//! edit, and pass it back with `subcat <stage> --config run.json`.

use subcat::pipeline::RunConfig;

fn main() -> subcat::error::Result<()> {
    println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
    Ok(())
}
