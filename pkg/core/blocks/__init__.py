"""Strategy blocks.

Each bit-allocation strategy is a StrategyBlock declared in
``block_specs/strategies/*.yaml`` and instantiated through the registry.
"""
