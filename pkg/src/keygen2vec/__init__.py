"""KeyGen2Vec: document embeddings from keyword-generating Seq2Seq networks,
with classical baselines and a topical-clustering evaluation harness."""

__version__ = "0.1.0"
