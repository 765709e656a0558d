"""Receiver-leading split training over a framed byte stream.

Import endpoints from their submodules; this package init stays empty so the
transmitter can be imported without the receiver's dependencies.
"""
