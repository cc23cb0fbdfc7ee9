"""Wire format, socket endpoints and the eavesdropping proxy.

The wire carries the exact simulated polarization (a Stokes vector) of each
pulse. This is a simulator, not a cryptosystem: anyone reading the frames
learns the state. Eve's power is whatever the strategies in
:mod:`threestage.adversary` grant her, applied in flight by the proxy.
"""
