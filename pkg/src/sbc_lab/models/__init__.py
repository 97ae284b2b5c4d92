"""Built-in test models: bivariate normal, analytic Bernoulli, ordered simplex."""
