use std::sync::Arc;

use anyhow::{Context, Result};

use segfuse_core::raster::ClassCatalog;
use segfuse_service::{ServiceConfig, TaskService};

use crate::cmd::data::{instance_classes, vocabulary};
use crate::util;
use crate::ServeArgs;

pub fn serve(a: ServeArgs, catalog: ClassCatalog) -> Result<()> {
    util::require_file(&a.manifest)?;
    util::require_dir(&a.fused)?;
    let mut cfg = ServiceConfig::new(&a.store, &a.manifest, &a.fused);
    cfg.instance_classes = instance_classes(&a.classes, &catalog)?;
    cfg.catalog = catalog;
    cfg.weather = vocabulary(&a.weather);
    let svc = Arc::new(TaskService::open(cfg).map_err(|e| anyhow::anyhow!("{e}"))?);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let (listener, addr) = segfuse_service::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        eprintln!("listening on http://{addr}");
        segfuse_service::serve(listener, svc).await?;
        Ok(())
    })
}
