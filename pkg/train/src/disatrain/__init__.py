"""Training side of the feature-similarity network: builds the synthetic
corpus, samples LC2-labeled patch pairs, trains the network, and exports
weights in the shared .dsw container."""
