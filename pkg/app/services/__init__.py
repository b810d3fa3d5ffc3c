from app.services.name_resolver import format_resolver, metric_resolver

# Singleton resolvers shared by the CLI and the pipeline.
__all__ = ["format_resolver", "metric_resolver"]
