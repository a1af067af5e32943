"""Task data: induction-head generators and MNIST ingestion."""
