# Core package for the manipulation primitives system
