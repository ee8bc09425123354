# CLI interface and stage runner