"""quiverflow: quiver varieties as explicit matrix data, reflection functors,
commuting Hamiltonian flows, and rational solutions of the KP hierarchy."""

__version__ = "0.1.0"
